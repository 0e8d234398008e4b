#pragma once

#include <array>
#include <cmath>

namespace dmanus {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double k) const { return {x * k, y * k, z * k}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline Vec3 operator*(double k, const Vec3& v) { return v * k; }

// Unit quaternion, scalar-first.
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quat axis_angle(const Vec3& axis, double angle) {
    const double h = 0.5 * angle;
    const double s = std::sin(h);
    return {std::cos(h), axis.x * s, axis.y * s, axis.z * s};
  }
  static Quat rot_x(double a) { return axis_angle({1, 0, 0}, a); }
  static Quat rot_y(double a) { return axis_angle({0, 1, 0}, a); }
  static Quat rot_z(double a) { return axis_angle({0, 0, 1}, a); }

  Quat operator*(const Quat& q) const {
    return {w * q.w - x * q.x - y * q.y - z * q.z,
            w * q.x + x * q.w + y * q.z - z * q.y,
            w * q.y - x * q.z + y * q.w + z * q.x,
            w * q.z + x * q.y - y * q.x + z * q.w};
  }

  Quat conj() const { return {w, -x, -y, -z}; }

  Vec3 rotate(const Vec3& v) const {
    // q v q*
    const Vec3 u{x, y, z};
    const Vec3 t = 2.0 * Vec3{u.y * v.z - u.z * v.y, u.z * v.x - u.x * v.z,
                              u.x * v.y - u.y * v.x};
    return v + w * t +
           Vec3{u.y * t.z - u.z * t.y, u.z * t.x - u.x * t.z,
                u.x * t.y - u.y * t.x};
  }

  // Rotate into this frame (inverse rotation).
  Vec3 rotate_inv(const Vec3& v) const { return conj().rotate(v); }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

// Rigid pose: rotation then translation.
struct Pose {
  Vec3 position;
  Quat orientation;

  Vec3 apply(const Vec3& local) const {
    return orientation.rotate(local) + position;
  }
  Pose then(const Quat& q, const Vec3& t) const {
    return {apply(t), orientation * q};
  }
};

}  // namespace dmanus
