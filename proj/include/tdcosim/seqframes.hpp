#pragma once

// Symmetrical components. Sequence order is always (zero, positive, negative).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>

#include <Eigen/Dense>

#include "tdcosim/errors.hpp"

namespace tdcosim {

using cplx = std::complex<double>;

enum class Frame { Phase, Sequence };

inline const char* to_string(Frame f) { return f == Frame::Phase ? "phase" : "sequence"; }

/// Three complex values tagged with the frame they live in.
class ComplexTriple {
public:
  ComplexTriple() = default;
  ComplexTriple(Frame frame, cplx x1, cplx x2, cplx x3) : v_{x1, x2, x3}, frame_(frame) {
    check_finite();
  }
  ComplexTriple(Frame frame, const std::array<cplx, 3>& v) : v_(v), frame_(frame) { check_finite(); }
  ComplexTriple(Frame frame, const Eigen::Vector3cd& v) : v_{v(0), v(1), v(2)}, frame_(frame) {
    check_finite();
  }

  static ComplexTriple phase(cplx a, cplx b, cplx c) { return {Frame::Phase, a, b, c}; }
  static ComplexTriple sequence(cplx zero, cplx pos, cplx neg) {
    return {Frame::Sequence, zero, pos, neg};
  }
  static ComplexTriple zeros(Frame f) { return {f, 0.0, 0.0, 0.0}; }
  static ComplexTriple uniform(Frame f, cplx x) { return {f, x, x, x}; }

  Frame frame() const noexcept { return frame_; }
  const cplx& operator[](std::size_t i) const { return v_.at(i); }
  std::span<const cplx, 3> values() const noexcept { return std::span<const cplx, 3>(v_); }
  Eigen::Vector3cd vec() const { return {v_[0], v_[1], v_[2]}; }

  ComplexTriple with(std::size_t i, cplx x) const {
    auto v = v_;
    v.at(i) = x;
    return {frame_, v};
  }

  friend ComplexTriple operator+(const ComplexTriple& l, const ComplexTriple& r) {
    same_frame(l, r);
    return {l.frame_, l.v_[0] + r.v_[0], l.v_[1] + r.v_[1], l.v_[2] + r.v_[2]};
  }
  friend ComplexTriple operator-(const ComplexTriple& l, const ComplexTriple& r) {
    same_frame(l, r);
    return {l.frame_, l.v_[0] - r.v_[0], l.v_[1] - r.v_[1], l.v_[2] - r.v_[2]};
  }
  friend ComplexTriple operator*(cplx k, const ComplexTriple& r) {
    return {r.frame_, k * r.v_[0], k * r.v_[1], k * r.v_[2]};
  }
  friend ComplexTriple operator*(const ComplexTriple& r, cplx k) { return k * r; }
  ComplexTriple operator-() const { return {frame_, -v_[0], -v_[1], -v_[2]}; }

  /// Largest absolute value over the real and imaginary parts.
  double max_abs_part() const {
    double m = 0.0;
    for (const auto& x : v_) m = std::max({m, std::abs(x.real()), std::abs(x.imag())});
    return m;
  }

  friend bool operator==(const ComplexTriple&, const ComplexTriple&) = default;

private:
  static void same_frame(const ComplexTriple& l, const ComplexTriple& r) {
    if (l.frame_ != r.frame_)
      throw FrameError(std::string("cannot combine ") + to_string(l.frame_) + " and " +
                       to_string(r.frame_) + " triples");
  }
  void check_finite() const {
    for (const auto& x : v_)
      if (!std::isfinite(x.real()) || !std::isfinite(x.imag()))
        throw DomainError("ComplexTriple component is not finite");
  }

  std::array<cplx, 3> v_{};
  Frame frame_ = Frame::Phase;
};

/// The operator a = exp(j 2pi/3), the 1/3-scaled analysis matrix T and its inverse A.
struct SequenceTransform {
  cplx a;
  Eigen::Matrix3cd T; // phase -> sequence
  Eigen::Matrix3cd A; // sequence -> phase

  static const SequenceTransform& get() {
    static const SequenceTransform instance = [] {
      SequenceTransform s;
      s.a = std::polar(1.0, 2.0 * std::numbers::pi / 3.0);
      const cplx a2 = s.a * s.a;
      s.A << 1.0, 1.0, 1.0, //
          1.0, a2, s.a,     //
          1.0, s.a, a2;
      s.T << 1.0, 1.0, 1.0, //
          1.0, s.a, a2,     //
          1.0, a2, s.a;
      s.T /= 3.0;
      return s;
    }();
    return instance;
  }
};

inline cplx op_a() { return SequenceTransform::get().a; }

inline ComplexTriple phase_to_sequence(const ComplexTriple& v) {
  if (v.frame() != Frame::Phase) throw FrameError("phase_to_sequence expects a phase-frame triple");
  return {Frame::Sequence, Eigen::Vector3cd(SequenceTransform::get().T * v.vec())};
}

inline ComplexTriple sequence_to_phase(const ComplexTriple& v) {
  if (v.frame() != Frame::Sequence)
    throw FrameError("sequence_to_phase expects a sequence-frame triple");
  return {Frame::Phase, Eigen::Vector3cd(SequenceTransform::get().A * v.vec())};
}

/// Balanced positive-sequence phase set with phase-a phasor `va`.
inline ComplexTriple balanced_phase(cplx va) {
  const cplx a = op_a();
  return ComplexTriple::phase(va, va * a * a, va * a);
}

/// Percent unbalance: 100 * max |m_i - mean| / mean over the component magnitudes.
inline double unbalance_percent(const ComplexTriple& m) {
  const double m0 = std::abs(m[0]), m1 = std::abs(m[1]), m2 = std::abs(m[2]);
  const double mean = (m0 + m1 + m2) / 3.0;
  if (!(mean > 0.0)) throw DomainError("unbalance_percent: mean magnitude is zero");
  const double dev = std::max({std::abs(m0 - mean), std::abs(m1 - mean), std::abs(m2 - mean)});
  return 100.0 * dev / mean;
}

inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

} // namespace tdcosim
