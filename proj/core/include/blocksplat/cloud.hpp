#pragma once

#include <cstdint>
#include <vector>

#include "blocksplat/math.hpp"

namespace blocksplat {

// Constant spherical-harmonics basis. Degree 0 carries plain RGB; degree 1
// adds a linear view-dependent term.
inline constexpr double kSh0 = 0.28209479177387814;
inline constexpr double kSh1 = 0.4886025119029199;

// Feature vector widths: 3 floats for degree 0, 3 + 9 for degree 1.
inline constexpr int kFeatureDimDeg0 = 3;
inline constexpr int kFeatureDimDeg1 = 12;

// One Gaussian, by value. Used at API boundaries; bulk storage lives in
// GaussianCloud's parallel arrays.
struct GaussianPrimitive {
    uint64_t id = 0;
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0); // unit quaternion (w, x, y, z)
    Vec3 log_scale = Vec3::Zero();
    std::vector<double> features;     // SH coefficients, kFeatureDim* wide
    double opacity_logit = 0.0;
};

// Structure-of-arrays Gaussian container. IDs are unique and ascending;
// append order is the caller's problem, `sort_by_id` restores the invariant.
class GaussianCloud {
public:
    GaussianCloud() = default;
    explicit GaussianCloud(int feature_dim) : feature_dim_(feature_dim) {}

    int feature_dim() const { return feature_dim_; }
    size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }

    std::vector<uint64_t> ids;
    std::vector<double> positions;      // 3 per Gaussian
    std::vector<double> rotations;      // 4 per Gaussian (w, x, y, z)
    std::vector<double> log_scales;     // 3 per Gaussian
    std::vector<double> features;       // feature_dim per Gaussian
    std::vector<double> opacity_logits; // 1 per Gaussian

    Vec3 position(size_t i) const { return Vec3(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]); }
    Vec4 rotation(size_t i) const {
        return Vec4(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
    }
    Vec3 log_scale(size_t i) const {
        return Vec3(log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]);
    }
    double opacity(size_t i) const { return sigmoid(opacity_logits[i]); }

    void set_position(size_t i, const Vec3& p) {
        positions[3 * i] = p[0]; positions[3 * i + 1] = p[1]; positions[3 * i + 2] = p[2];
    }
    void set_rotation(size_t i, const Vec4& q) {
        rotations[4 * i] = q[0]; rotations[4 * i + 1] = q[1];
        rotations[4 * i + 2] = q[2]; rotations[4 * i + 3] = q[3];
    }
    void set_log_scale(size_t i, const Vec3& s) {
        log_scales[3 * i] = s[0]; log_scales[3 * i + 1] = s[1]; log_scales[3 * i + 2] = s[2];
    }

    void resize(size_t n) {
        ids.resize(n);
        positions.resize(3 * n);
        rotations.resize(4 * n, 0.0);
        log_scales.resize(3 * n);
        features.resize(n * static_cast<size_t>(feature_dim_));
        opacity_logits.resize(n);
    }

    void push_back(const GaussianPrimitive& g);
    GaussianPrimitive primitive(size_t i) const;

    // Removes the Gaussians whose indices are listed (indices into the
    // current array order, any order, duplicates ignored).
    void remove_indices(const std::vector<size_t>& indices);

    // Restores the ascending-ID invariant after out-of-order appends.
    void sort_by_id();

    // True when IDs are strictly ascending and all arrays are length-consistent.
    bool check_invariants() const;

    // Index of `id`, or npos. Requires sorted IDs.
    static constexpr size_t npos = static_cast<size_t>(-1);
    size_t find(uint64_t id) const;

    // Renormalizes every quaternion and applies the w >= 0 convention.
    void canonicalize_rotations();

    // Subset copy, preserving order.
    GaussianCloud subset(const std::vector<size_t>& indices) const;

private:
    int feature_dim_ = kFeatureDimDeg0;
};

// Slice of `cloud` restricted to `ids` (ascending); ids absent from the
// cloud are skipped.
GaussianCloud slice_by_ids(const GaussianCloud& cloud, const std::vector<uint64_t>& ids);

// Overwrites rows of `dst` that share an ID with `src`; IDs unknown to dst
// are ignored. Returns how many rows were written.
size_t overwrite_by_ids(GaussianCloud& dst, const GaussianCloud& src);

// Removes rows by ID; unknown IDs are ignored.
void erase_by_ids(GaussianCloud& dst, const std::vector<uint64_t>& ids);

// Merges rows into `dst`, keeping IDs sorted. Duplicate IDs are an error.
void insert_rows(GaussianCloud& dst, const GaussianCloud& rows);

// All-zero parameter bundle over the given ascending IDs (used for duals).
GaussianCloud zero_bundle(const std::vector<uint64_t>& ids, int feature_dim);

// Order- and bit-sensitive digest over IDs and all parameter arrays.
uint64_t cloud_checksum(const GaussianCloud& cloud);

// Sigma = R S S^T R^T with S = diag(exp(log_scale)). The quaternion is
// normalized internally so gradients and finite differences agree off the
// unit sphere.
Mat3 covariance_from_params(const Vec4& rotation, const Vec3& log_scale);

// exp(-1/2 (p-u)^T Sigma^-1 (p-u)); adds `regularization` * I before the
// inverse. Throws InvalidArgument("singular covariance") if the regularized
// matrix is still not invertible.
double evaluate_gaussian(const Vec3& center, const Mat3& covariance, const Vec3& p,
                         double regularization = 1e-8);

// RGB from SH features. Degree 0 ignores `view_dir`; degree 1 adds the
// linear band evaluated at the unit view direction.
Vec3 sh_color(const double* features, int feature_dim, const Vec3& view_dir);

} // namespace blocksplat
