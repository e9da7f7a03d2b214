#pragma once

#include <cmath>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tog/error.h"

// Pinhole camera and rigid-motion primitives.
//
// Camera frames are x-right, y-down, z-forward. Pixel coordinates are
// (u rightward, v downward). No lens distortion is modeled.

namespace tog {

template <typename T>
using Pixel = Eigen::Matrix<T, 2, 1>;
template <typename T>
using Point3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Direction3 = Eigen::Matrix<T, 3, 1>;

using Pixeld = Pixel<double>;
using Point3d = Point3<double>;
using Direction3d = Direction3<double>;

template <typename T>
struct CameraIntrinsics {
  T fx = T(1);
  T fy = T(1);
  T cx = T(0);
  T cy = T(0);
  int width = 1;
  int height = 1;

  bool IsValid() const {
    return fx > T(0) && fy > T(0) && width > 0 && height > 0 && cx >= T(0) &&
           cx < T(width) && cy >= T(0) && cy < T(height);
  }

  Eigen::Matrix<T, 3, 3> Matrix() const {
    Eigen::Matrix<T, 3, 3> K;
    K << fx, T(0), cx, T(0), fy, cy, T(0), T(0), T(1);
    return K;
  }

  bool Contains(const Pixel<T>& px) const {
    return px.x() >= T(0) && px.y() >= T(0) && px.x() <= T(width - 1) &&
           px.y() <= T(height - 1);
  }

  template <typename U>
  CameraIntrinsics<U> cast() const {
    return {U(fx), U(fy), U(cx), U(cy), width, height};
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

using CameraIntrinsicsd = CameraIntrinsics<double>;

// Rotation + translation. Maps points of one camera frame into another:
// y = rotation * x + translation.
template <typename T>
struct RigidTransform {
  Eigen::Matrix<T, 3, 3> rotation = Eigen::Matrix<T, 3, 3>::Identity();
  Point3<T> translation = Point3<T>::Zero();

  static RigidTransform Identity() { return {}; }

  RigidTransform Inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  bool IsValid(T tol = T(1e-9)) const {
    const Eigen::Matrix<T, 3, 3> gram = rotation.transpose() * rotation;
    return (gram - Eigen::Matrix<T, 3, 3>::Identity()).cwiseAbs().maxCoeff() <=
               tol &&
           std::abs(rotation.determinant() - T(1)) <= tol;
  }
};

using RigidTransformd = RigidTransform<double>;

template <typename T>
Pixel<T> Project(const CameraIntrinsics<T>& K, const Point3<T>& p) {
  if (!(p.z() > T(0))) {
    throw Error(ErrorCode::kNonPositiveDepth, "cannot project point with z <= 0");
  }
  return Pixel<T>(K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy);
}

template <typename T>
Point3<T> Backproject(const CameraIntrinsics<T>& K, const Pixel<T>& px,
                      T depth) {
  if (!(depth > T(0))) {
    throw Error(ErrorCode::kNonPositiveDepth, "backprojection depth must be > 0");
  }
  return Point3<T>((px.x() - K.cx) / K.fx * depth,
                   (px.y() - K.cy) / K.fy * depth, depth);
}

template <typename T>
Point3<T> TransformPoint(const RigidTransform<T>& tf, const Point3<T>& p) {
  return tf.rotation * p + tf.translation;
}

// Maps a direction expressed in the transform's destination frame back into
// its source frame. Translation does not act on directions.
template <typename T>
Direction3<T> RotateDirectionInverse(const RigidTransform<T>& tf,
                                     const Direction3<T>& v) {
  return (tf.rotation.transpose() * v).normalized();
}

// Angle of the relative rotation R_a^T R_b, in radians.
template <typename T>
T RotationGeodesicDistance(const Eigen::Matrix<T, 3, 3>& a,
                           const Eigen::Matrix<T, 3, 3>& b) {
  const Eigen::Matrix<T, 3, 3> rel = a.transpose() * b;
  // acos loses precision near identity; the quaternion form does not.
  const Eigen::Quaternion<T> q(rel);
  const T vec_norm = q.vec().norm();
  return T(2) * std::atan2(vec_norm, std::abs(q.w()));
}

template <typename T>
T AngleBetween(const Direction3<T>& a, const Direction3<T>& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

template <typename T>
Eigen::Matrix<T, 3, 3> RotationFromAxisAngle(const Eigen::Matrix<T, 3, 1>& w) {
  const T angle = w.norm();
  if (angle == T(0)) {
    return Eigen::Matrix<T, 3, 3>::Identity();
  }
  return Eigen::AngleAxis<T>(angle, w / angle).toRotationMatrix();
}

// Plain-text `key=value` intrinsics file (fx, fy, cx, cy, width, height).
CameraIntrinsicsd ReadIntrinsics(const std::string& path);
void WriteIntrinsics(const CameraIntrinsicsd& K, const std::string& path);
CameraIntrinsicsd ParseIntrinsics(const std::string& text);
std::string FormatIntrinsics(const CameraIntrinsicsd& K);

}  // namespace tog
