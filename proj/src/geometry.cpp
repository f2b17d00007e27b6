#include "camtraj/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace camtraj::geometry {

double Vec3::norm() const { return std::sqrt(dot(*this)); }

Vec3 Vec3::normalized() const {
    double n = norm();
    if (n == 0) throw InvalidInputError("cannot normalize zero vector");
    return *this * (1.0 / n);
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
            r(i, j) = s;
        }
    return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

double Mat3::orthonormality_error() const {
    Mat3 g = transposed() * (*this);
    double err = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            err = std::max(err, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    return err;
}

bool Mat3::is_rotation(double tol) const {
    return orthonormality_error() <= tol && std::abs(det() - 1.0) <= tol;
}

double Quaternion::norm() const { return std::sqrt(dot(*this)); }

Quaternion Quaternion::normalized() const {
    double n = norm();
    if (n == 0) throw InvalidInputError("zero-norm quaternion");
    return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::canonicalized() const {
    if (w < 0) return {-w, -x, -y, -z};
    return *this;
}

Mat3 quat_to_matrix(const Quaternion& q_in) {
    Quaternion q = q_in.normalized();
    Mat3 r;
    double xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
    double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
    double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
    r(0, 0) = 1 - 2 * (yy + zz);
    r(0, 1) = 2 * (xy - wz);
    r(0, 2) = 2 * (xz + wy);
    r(1, 0) = 2 * (xy + wz);
    r(1, 1) = 1 - 2 * (xx + zz);
    r(1, 2) = 2 * (yz - wx);
    r(2, 0) = 2 * (xz - wy);
    r(2, 1) = 2 * (yz + wx);
    r(2, 2) = 1 - 2 * (xx + yy);
    return r;
}

Quaternion matrix_to_quat(const Mat3& r) {
    // Shepperd's method: pick the largest diagonal combination for stability.
    Quaternion q;
    double tr = r(0, 0) + r(1, 1) + r(2, 2);
    if (tr > 0) {
        double s = std::sqrt(tr + 1.0) * 2;
        q.w = 0.25 * s;
        q.x = (r(2, 1) - r(1, 2)) / s;
        q.y = (r(0, 2) - r(2, 0)) / s;
        q.z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
        q.w = (r(2, 1) - r(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (r(0, 1) + r(1, 0)) / s;
        q.z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
        q.w = (r(0, 2) - r(2, 0)) / s;
        q.x = (r(0, 1) + r(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (r(1, 2) + r(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
        q.w = (r(1, 0) - r(0, 1)) / s;
        q.x = (r(0, 2) + r(2, 0)) / s;
        q.y = (r(1, 2) + r(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return q.normalized().canonicalized();
}

std::array<double, 6> matrix_to_6d(const Mat3& r) {
    return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

Mat3 sixd_to_matrix(const std::array<double, 6>& v) {
    Vec3 a1{v[0], v[1], v[2]}, a2{v[3], v[4], v[5]};
    if (a1.norm() == 0) throw InvalidInputError("6d rotation: zero first vector");
    Vec3 b1 = a1.normalized();
    Vec3 r = a2 - b1 * b1.dot(a2);
    if (r.norm() < 1e-12) throw InvalidInputError("6d rotation: parallel input vectors");
    Vec3 b2 = r.normalized();
    Vec3 b3 = b1.cross(b2);
    Mat3 m;
    m(0, 0) = b1.x; m(1, 0) = b1.y; m(2, 0) = b1.z;
    m(0, 1) = b2.x; m(1, 1) = b2.y; m(2, 1) = b2.z;
    m(0, 2) = b3.x; m(1, 2) = b3.y; m(2, 2) = b3.z;
    return m;
}

Quaternion slerp(const Quaternion& a_in, const Quaternion& b_in, double t) {
    Quaternion a = a_in.normalized().canonicalized();
    Quaternion b = b_in.normalized().canonicalized();
    double d = a.dot(b);
    if (d < 0) {  // still take the short arc
        b = {-b.w, -b.x, -b.y, -b.z};
        d = -d;
    }
    if (d > 1.0 - 1e-12) {  // nearly identical: nlerp
        Quaternion q{a.w + t * (b.w - a.w), a.x + t * (b.x - a.x),
                     a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)};
        return q.normalized();
    }
    double theta = std::acos(std::clamp(d, -1.0, 1.0));
    double s = std::sin(theta);
    double wa = std::sin((1 - t) * theta) / s;
    double wb = std::sin(t * theta) / s;
    return Quaternion{wa * a.w + wb * b.w, wa * a.x + wb * b.x, wa * a.y + wb * b.y,
                      wa * a.z + wb * b.z}
        .normalized();
}

std::string frame_name(Frame f) { return f == Frame::Aria ? "Aria" : "OpenCV"; }

Frame frame_from_name(const std::string& name) {
    if (name == "Aria") return Frame::Aria;
    if (name == "OpenCV") return Frame::OpenCV;
    throw FormatError("unknown frame convention: " + name);
}

void Trajectory::validate() const {
    if (poses.empty()) throw InvalidInputError("empty trajectory");
    if (!(sample_rate_hz > 0)) throw InvalidInputError("sample_rate_hz must be > 0");
    for (size_t i = 1; i < poses.size(); ++i)
        if (!(poses[i].timestamp > poses[i - 1].timestamp))
            throw InvalidInputError("timestamps must be strictly increasing at index " +
                                    std::to_string(i));
    for (const Pose& p : poses)
        if (!std::isfinite(p.timestamp)) throw InvalidInputError("non-finite timestamp");
}

RelativePoseSequence relative_to_midpoint(const Trajectory& traj, bool use_gravity) {
    if (traj.poses.empty()) throw InvalidInputError("empty trajectory");
    if (use_gravity && !traj.gravity_world)
        throw MissingGravityError("use_gravity set but trajectory has no gravity_world");

    size_t mid = traj.poses.size() / 2;
    const Mat3 rmid_t = traj.poses[mid].rotation.transposed();
    const Vec3& tmid = traj.poses[mid].translation;

    RelativePoseSequence out;
    out.n = traj.poses.size();
    out.midpoint_index = mid;
    out.rows.resize(out.n * 9);
    for (size_t i = 0; i < out.n; ++i) {
        Vec3 t_rel = rmid_t * (traj.poses[i].translation - tmid);
        Mat3 r_rel = rmid_t * traj.poses[i].rotation;
        double* row = out.rows.data() + i * 9;
        row[0] = t_rel.x;
        row[1] = t_rel.y;
        row[2] = t_rel.z;
        auto sixd = matrix_to_6d(r_rel);
        std::copy(sixd.begin(), sixd.end(), row + 3);
    }
    if (use_gravity && traj.gravity_world) out.gravity_ref = rmid_t * *traj.gravity_world;
    return out;
}

Vec3 gravity_in_reference(const Trajectory& traj) {
    if (!traj.gravity_world) throw MissingGravityError("trajectory has no gravity_world");
    if (traj.poses.empty()) throw InvalidInputError("empty trajectory");
    size_t mid = traj.poses.size() / 2;
    return traj.poses[mid].rotation.transposed() * *traj.gravity_world;
}

namespace {
// Conjugation by S = diag(-1,-1,1): flips x and y of translations and the
// corresponding rows/columns of rotations. S is its own inverse.
Pose conjugate_pose(const Pose& p) {
    Pose out = p;
    out.translation = {-p.translation.x, -p.translation.y, p.translation.z};
    Mat3& r = out.rotation;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double si = i == 2 ? 1.0 : -1.0;
            double sj = j == 2 ? 1.0 : -1.0;
            r(i, j) = si * sj * p.rotation(i, j);
        }
    return out;
}
}  // namespace

Trajectory convert_frame(const Trajectory& traj, Frame target) {
    if (traj.frame == target) return traj;
    Trajectory out = traj;
    out.frame = target;
    for (Pose& p : out.poses) p = conjugate_pose(p);
    if (traj.gravity_world)
        out.gravity_world = Vec3{-traj.gravity_world->x, -traj.gravity_world->y,
                                 traj.gravity_world->z};
    return out;
}

std::vector<Pose> sample_at(const Trajectory& traj, const std::vector<double>& times) {
    if (traj.poses.size() < 2) throw InvalidInputError("need >= 2 poses to interpolate");
    const auto& poses = traj.poses;
    std::vector<Pose> out;
    out.reserve(times.size());
    const double eps = 1e-9;
    for (double ts : times) {
        if (ts < poses.front().timestamp - eps || ts > poses.back().timestamp + eps)
            throw InvalidInputError("query time outside trajectory extent");
        ts = std::clamp(ts, poses.front().timestamp, poses.back().timestamp);
        auto it = std::upper_bound(
            poses.begin(), poses.end(), ts,
            [](double t, const Pose& p) { return t < p.timestamp; });
        size_t hi = std::min<size_t>(std::distance(poses.begin(), it), poses.size() - 1);
        size_t lo = hi == 0 ? 0 : hi - 1;
        const Pose& a = poses[lo];
        const Pose& b = poses[hi];
        double u = hi == lo ? 0.0 : (ts - a.timestamp) / (b.timestamp - a.timestamp);
        Pose p;
        p.timestamp = ts;
        p.translation = a.translation + (b.translation - a.translation) * u;
        if (u <= 0) {
            p.rotation = a.rotation;
        } else if (u >= 1) {
            p.rotation = b.rotation;
        } else {
            Quaternion q = slerp(matrix_to_quat(a.rotation), matrix_to_quat(b.rotation), u);
            p.rotation = quat_to_matrix(q);
        }
        out.push_back(p);
    }
    return out;
}

Trajectory resample(const Trajectory& traj, double target_hz) {
    if (traj.poses.size() < 2) throw InvalidInputError("resample needs >= 2 poses");
    if (!(target_hz > 0)) throw InvalidInputError("target_hz must be > 0");
    double t0 = traj.start_time();
    double t1 = traj.end_time();
    size_t count = static_cast<size_t>(std::floor((t1 - t0) * target_hz + 1e-9)) + 1;
    std::vector<double> times(count);
    for (size_t i = 0; i < count; ++i) times[i] = t0 + static_cast<double>(i) / target_hz;
    Trajectory out = traj;
    out.poses = sample_at(traj, times);
    out.sample_rate_hz = target_hz;
    return out;
}

Trajectory load_tum(const std::string& pose_path, const std::string& meta_path) {
    std::ifstream in(pose_path);
    if (!in) throw IoError("cannot open trajectory file: " + pose_path);
    Trajectory traj;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        double ts, tx, ty, tz, qx, qy, qz, qw;
        if (!(ls >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
            throw FormatError(pose_path + ":" + std::to_string(lineno) +
                              ": malformed TUM pose line");
        Pose p;
        p.timestamp = ts;
        p.translation = {tx, ty, tz};
        p.rotation = quat_to_matrix(Quaternion{qw, qx, qy, qz});
        traj.poses.push_back(p);
    }

    std::ifstream meta_in(meta_path);
    if (!meta_in) throw IoError("cannot open trajectory metadata: " + meta_path);
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(meta_path + ": invalid JSON: " + e.what());
    }
    traj.frame = frame_from_name(meta.at("frame").get<std::string>());
    traj.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
    if (meta.contains("gravity_world") && !meta["gravity_world"].is_null()) {
        auto g = meta["gravity_world"];
        if (!g.is_array() || g.size() != 3)
            throw FormatError(meta_path + ": gravity_world must be a 3-vector");
        traj.gravity_world = Vec3{g[0].get<double>(), g[1].get<double>(), g[2].get<double>()};
    }
    traj.validate();
    return traj;
}

void save_tum(const Trajectory& traj, const std::string& pose_path,
              const std::string& meta_path) {
    std::ofstream out(pose_path);
    if (!out) throw IoError("cannot write trajectory file: " + pose_path);
    out << "# timestamp tx ty tz qx qy qz qw\n";
    out.precision(17);
    for (const Pose& p : traj.poses) {
        Quaternion q = matrix_to_quat(p.rotation);
        out << p.timestamp << ' ' << p.translation.x << ' ' << p.translation.y << ' '
            << p.translation.z << ' ' << q.x << ' ' << q.y << ' ' << q.z << ' ' << q.w
            << '\n';
    }
    nlohmann::json meta;
    meta["frame"] = frame_name(traj.frame);
    meta["sample_rate_hz"] = traj.sample_rate_hz;
    if (traj.gravity_world)
        meta["gravity_world"] = {traj.gravity_world->x, traj.gravity_world->y,
                                 traj.gravity_world->z};
    std::ofstream meta_out(meta_path);
    if (!meta_out) throw IoError("cannot write trajectory metadata: " + meta_path);
    meta_out << meta.dump(2) << '\n';
}

}  // namespace camtraj::geometry
