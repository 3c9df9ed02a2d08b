#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "resplat/core/error.hpp"

namespace resplat {

/// Pinhole camera. R and t map world to camera: x_cam = R x_world + t.
/// Pixel (u, v) covers [u, u+1) x [v, v+1); its center is (u + 0.5, v + 0.5).
struct Camera {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    int width = 0;
    int height = 0;

    static Camera make(double fx, double fy, double cx, double cy, int width, int height,
                       const Eigen::Matrix3d& R = Eigen::Matrix3d::Identity(),
                       const Eigen::Vector3d& t = Eigen::Vector3d::Zero()) {
        Camera c;
        c.K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
        c.R = R;
        c.t = t;
        c.width = width;
        c.height = height;
        return c;
    }

    double fx() const { return K(0, 0); }
    double fy() const { return K(1, 1); }
    double cx() const { return K(0, 2); }
    double cy() const { return K(1, 2); }

    Eigen::Vector3d center() const { return -R.transpose() * t; }

    void validate() const {
        require(width > 0 && height > 0, "camera: image size must be positive, got ", width, "x", height);
        require(fx() > 0 && fy() > 0, "camera: focal lengths must be positive, got ", fx(), ", ", fy());
        require(cx() >= 0 && cx() <= width && cy() >= 0 && cy() <= height, "camera: principal point (", cx(),
                ", ", cy(), ") outside the ", width, "x", height, " image");
        require(std::abs(K.determinant()) > 1e-12, "camera: singular intrinsics");
        const double orth = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
        require(orth < 1e-9, "camera: rotation is not orthonormal (deviation ", orth, ")");
        require(std::abs(R.determinant() - 1.0) < 1e-9, "camera: rotation determinant is ", R.determinant(),
                ", expected 1");
    }

    /// Camera for a grid subsampled by `stride`: intrinsics divided by the stride
    /// and extents rounded up.
    Camera subsampled(int stride) const {
        Camera c = *this;
        c.K(0, 0) /= stride;
        c.K(1, 1) /= stride;
        c.K(0, 2) /= stride;
        c.K(1, 2) /= stride;
        c.width = (width + stride - 1) / stride;
        c.height = (height + stride - 1) / stride;
        return c;
    }
};

struct Projection {
    double u = 0;
    double v = 0;
    double depth = 0; // camera-space z
    bool behind = false;
};

inline Projection project(const Camera& cam, const Eigen::Vector3d& p) {
    const Eigen::Vector3d pc = cam.R * p + cam.t;
    Projection out;
    out.depth = pc.z();
    out.behind = pc.z() <= 0;
    if (!out.behind) {
        out.u = cam.fx() * pc.x() / pc.z() + cam.cx();
        out.v = cam.fy() * pc.y() / pc.z() + cam.cy();
    }
    return out;
}

/// Unit-depth camera-space ray through the center of pixel (u, v).
inline Eigen::Vector3d pixel_ray(const Camera& cam, double u, double v) {
    return cam.K.inverse() * Eigen::Vector3d(u + 0.5, v + 0.5, 1.0);
}

/// World point seen at the center of pixel (u, v) at camera depth d.
inline Eigen::Vector3d unproject_pixel(const Camera& cam, double u, double v, double d) {
    return cam.R.transpose() * (pixel_ray(cam, u, v) * d - cam.t);
}

/// Camera at `eye` looking at `target`; `up` points toward the top of the image.
inline Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                      double fx, double fy, int width, int height) {
    const Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = z.cross(up);
    if (x.norm() < 1e-9) x = z.unitOrthogonal();
    x.normalize();
    const Eigen::Vector3d y = z.cross(x);
    Eigen::Matrix3d R;
    R.row(0) = x.transpose();
    R.row(1) = y.transpose();
    R.row(2) = z.transpose();
    return Camera::make(fx, fy, width / 2.0, height / 2.0, width, height, R, -R * eye);
}

} // namespace resplat
