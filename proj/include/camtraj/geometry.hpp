#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "camtraj/error.hpp"

namespace camtraj::geometry {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const;
    Vec3 normalized() const;
};

// Row-major 3x3 rotation matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }
    double& operator()(int r, int c) { return m[r * 3 + c]; }

    Mat3 operator*(const Mat3& o) const;
    Vec3 operator*(const Vec3& v) const;
    Mat3 transposed() const;
    double det() const;

    // Max-abs deviation from orthonormality, |R^T R - I|_inf.
    double orthonormality_error() const;
    bool is_rotation(double tol = 1e-9) const;
};

struct Quaternion {
    double w = 1, x = 0, y = 0, z = 0;

    double norm() const;
    Quaternion normalized() const;  // throws InvalidInputError on zero norm
    // Flip sign so w >= 0 (double-cover canonical hemisphere).
    Quaternion canonicalized() const;
    double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
};

Mat3 quat_to_matrix(const Quaternion& q);
Quaternion matrix_to_quat(const Mat3& r);

// First two columns of R, column-major: (R00,R10,R20, R01,R11,R21).
std::array<double, 6> matrix_to_6d(const Mat3& r);
// Gram-Schmidt decode; throws InvalidInputError on degenerate input.
Mat3 sixd_to_matrix(const std::array<double, 6>& v);

// Hemisphere-corrected spherical linear interpolation, t in [0, 1].
Quaternion slerp(const Quaternion& a, const Quaternion& b, double t);

enum class Frame { Aria, OpenCV };

std::string frame_name(Frame f);
Frame frame_from_name(const std::string& name);

struct Pose {
    Vec3 translation;  // meters
    Mat3 rotation;
    double timestamp = 0;  // seconds
};

struct Trajectory {
    std::vector<Pose> poses;
    Frame frame = Frame::Aria;
    double sample_rate_hz = 0;
    std::optional<Vec3> gravity_world;  // m/s^2, world frame

    // Throws InvalidInputError when timestamps are not strictly increasing
    // or the sample rate is non-positive.
    void validate() const;
    double start_time() const { return poses.front().timestamp; }
    double end_time() const { return poses.back().timestamp; }
};

// N x 9 model input: columns 0-2 relative translation, 3-8 the 6D rotation.
struct RelativePoseSequence {
    size_t n = 0;
    std::vector<double> rows;  // n*9, row-major
    size_t midpoint_index = 0;
    std::optional<Vec3> gravity_ref;

    const double* row(size_t i) const { return rows.data() + i * 9; }
};

// Poses re-expressed relative to the midpoint pose (index floor(N/2)).
// With use_gravity, gravity_world is rotated into the midpoint camera frame;
// missing gravity raises MissingGravityError.
RelativePoseSequence relative_to_midpoint(const Trajectory& traj, bool use_gravity);

// Midpoint-frame gravity alone (same convention as relative_to_midpoint).
Vec3 gravity_in_reference(const Trajectory& traj);

// Aria (x left, y up, z forward) <-> OpenCV (x right, y down, z forward) by
// conjugation with diag(-1,-1,1). No-op when already in the target frame.
Trajectory convert_frame(const Trajectory& traj, Frame target);

// Interpolate the trajectory at the given query times (must lie within the
// trajectory extent); linear translation, slerp rotation.
std::vector<Pose> sample_at(const Trajectory& traj, const std::vector<double>& times);

// Uniform resampling at target_hz spanning [first, last]. Needs >= 2 poses.
Trajectory resample(const Trajectory& traj, double target_hz);

// TUM text format: "timestamp tx ty tz qx qy qz qw" per line, '#' comments.
// The sidecar JSON carries frame convention, nominal Hz and optional gravity.
Trajectory load_tum(const std::string& pose_path, const std::string& meta_path);
void save_tum(const Trajectory& traj, const std::string& pose_path,
              const std::string& meta_path);

}  // namespace camtraj::geometry
