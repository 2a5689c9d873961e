#include "blocksplat/cloud.hpp"

#include <algorithm>
#include <numeric>

#include "blocksplat/errors.hpp"

namespace blocksplat {

void GaussianCloud::push_back(const GaussianPrimitive& g) {
    if (static_cast<int>(g.features.size()) != feature_dim_)
        throw InvalidArgument("feature vector width mismatch");
    ids.push_back(g.id);
    positions.insert(positions.end(), g.position.data(), g.position.data() + 3);
    rotations.insert(rotations.end(), g.rotation.data(), g.rotation.data() + 4);
    log_scales.insert(log_scales.end(), g.log_scale.data(), g.log_scale.data() + 3);
    features.insert(features.end(), g.features.begin(), g.features.end());
    opacity_logits.push_back(g.opacity_logit);
}

GaussianPrimitive GaussianCloud::primitive(size_t i) const {
    GaussianPrimitive g;
    g.id = ids[i];
    g.position = position(i);
    g.rotation = rotation(i);
    g.log_scale = log_scale(i);
    g.features.assign(features.begin() + static_cast<ptrdiff_t>(i) * feature_dim_,
                      features.begin() + static_cast<ptrdiff_t>(i + 1) * feature_dim_);
    g.opacity_logit = opacity_logits[i];
    return g;
}

void GaussianCloud::remove_indices(const std::vector<size_t>& indices) {
    if (indices.empty()) return;
    std::vector<char> drop(size(), 0);
    for (size_t i : indices) drop[i] = 1;
    size_t w = 0;
    for (size_t r = 0; r < size(); ++r) {
        if (drop[r]) continue;
        if (w != r) {
            ids[w] = ids[r];
            for (int k = 0; k < 3; ++k) positions[3 * w + k] = positions[3 * r + k];
            for (int k = 0; k < 4; ++k) rotations[4 * w + k] = rotations[4 * r + k];
            for (int k = 0; k < 3; ++k) log_scales[3 * w + k] = log_scales[3 * r + k];
            for (int k = 0; k < feature_dim_; ++k)
                features[w * feature_dim_ + k] = features[r * feature_dim_ + k];
            opacity_logits[w] = opacity_logits[r];
        }
        ++w;
    }
    ids.resize(w);
    positions.resize(3 * w);
    rotations.resize(4 * w);
    log_scales.resize(3 * w);
    features.resize(w * static_cast<size_t>(feature_dim_));
    opacity_logits.resize(w);
}

void GaussianCloud::sort_by_id() {
    std::vector<size_t> order(size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return ids[a] < ids[b]; });
    *this = subset(order);
}

bool GaussianCloud::check_invariants() const {
    const size_t n = ids.size();
    if (positions.size() != 3 * n || rotations.size() != 4 * n || log_scales.size() != 3 * n ||
        features.size() != n * static_cast<size_t>(feature_dim_) || opacity_logits.size() != n)
        return false;
    for (size_t i = 1; i < n; ++i)
        if (ids[i] <= ids[i - 1]) return false;
    return true;
}

size_t GaussianCloud::find(uint64_t id) const {
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id) return npos;
    return static_cast<size_t>(it - ids.begin());
}

void GaussianCloud::canonicalize_rotations() {
    for (size_t i = 0; i < size(); ++i)
        set_rotation(i, quat_canonical(quat_normalized(rotation(i))));
}

GaussianCloud GaussianCloud::subset(const std::vector<size_t>& indices) const {
    GaussianCloud out(feature_dim_);
    out.ids.reserve(indices.size());
    for (size_t i : indices) out.push_back(primitive(i));
    return out;
}

GaussianCloud slice_by_ids(const GaussianCloud& cloud, const std::vector<uint64_t>& ids) {
    std::vector<size_t> idx;
    idx.reserve(ids.size());
    for (uint64_t id : ids) {
        const size_t i = cloud.find(id);
        if (i != GaussianCloud::npos) idx.push_back(i);
    }
    return cloud.subset(idx);
}

size_t overwrite_by_ids(GaussianCloud& dst, const GaussianCloud& src) {
    if (dst.feature_dim() != src.feature_dim())
        throw InvalidArgument("feature vector width mismatch");
    const int fd = dst.feature_dim();
    size_t written = 0;
    for (size_t j = 0; j < src.size(); ++j) {
        const size_t i = dst.find(src.ids[j]);
        if (i == GaussianCloud::npos) continue;
        for (int k = 0; k < 3; ++k) dst.positions[3 * i + k] = src.positions[3 * j + k];
        for (int k = 0; k < 4; ++k) dst.rotations[4 * i + k] = src.rotations[4 * j + k];
        for (int k = 0; k < 3; ++k) dst.log_scales[3 * i + k] = src.log_scales[3 * j + k];
        for (int k = 0; k < fd; ++k) dst.features[i * fd + k] = src.features[j * fd + k];
        dst.opacity_logits[i] = src.opacity_logits[j];
        ++written;
    }
    return written;
}

void erase_by_ids(GaussianCloud& dst, const std::vector<uint64_t>& ids) {
    std::vector<size_t> idx;
    for (uint64_t id : ids) {
        const size_t i = dst.find(id);
        if (i != GaussianCloud::npos) idx.push_back(i);
    }
    dst.remove_indices(idx);
}

void insert_rows(GaussianCloud& dst, const GaussianCloud& rows) {
    for (size_t j = 0; j < rows.size(); ++j) {
        if (dst.find(rows.ids[j]) != GaussianCloud::npos)
            throw InvalidArgument("duplicate id on insert");
        dst.push_back(rows.primitive(j));
    }
    dst.sort_by_id();
}

GaussianCloud zero_bundle(const std::vector<uint64_t>& ids, int feature_dim) {
    GaussianCloud c(feature_dim);
    c.ids = ids;
    c.positions.assign(3 * ids.size(), 0.0);
    c.rotations.assign(4 * ids.size(), 0.0);
    c.log_scales.assign(3 * ids.size(), 0.0);
    c.features.assign(ids.size() * static_cast<size_t>(feature_dim), 0.0);
    c.opacity_logits.assign(ids.size(), 0.0);
    return c;
}

uint64_t cloud_checksum(const GaussianCloud& cloud) {
    uint64_t h = fnv1a64(cloud.ids.data(), cloud.ids.size() * sizeof(uint64_t));
    auto fold = [&h](const std::vector<double>& v) { h = fnv1a64(v.data(), v.size() * sizeof(double), h); };
    fold(cloud.positions);
    fold(cloud.rotations);
    fold(cloud.log_scales);
    fold(cloud.features);
    fold(cloud.opacity_logits);
    return h;
}

Mat3 covariance_from_params(const Vec4& rotation, const Vec3& log_scale) {
    const Mat3 r = quat_to_rotation(quat_normalized(rotation));
    const Vec3 s = log_scale.array().exp();
    const Mat3 m = r * s.asDiagonal(); // M = R S
    return m * m.transpose();
}

double evaluate_gaussian(const Vec3& center, const Mat3& covariance, const Vec3& p,
                         double regularization) {
    Mat3 reg = covariance + regularization * Mat3::Identity();
    Eigen::LDLT<Mat3> ldlt(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw InvalidArgument("singular covariance");
    const Vec3 d = p - center;
    const double q = d.dot(ldlt.solve(d));
    return std::exp(-0.5 * q);
}

Vec3 sh_color(const double* features, int feature_dim, const Vec3& view_dir) {
    Vec3 c(kSh0 * features[0], kSh0 * features[1], kSh0 * features[2]);
    if (feature_dim >= kFeatureDimDeg1) {
        // Band 1 basis: (-y, z, -x) scaled by kSh1, coefficients stored
        // channel-major after the DC block.
        const Vec3 d = view_dir.normalized();
        const double b0 = -kSh1 * d.y();
        const double b1 = kSh1 * d.z();
        const double b2 = -kSh1 * d.x();
        for (int ch = 0; ch < 3; ++ch)
            c[ch] += b0 * features[3 + 3 * ch] + b1 * features[4 + 3 * ch] + b2 * features[5 + 3 * ch];
    }
    return c;
}

} // namespace blocksplat
