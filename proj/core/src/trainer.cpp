#include "blocksplat/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "blocksplat/errors.hpp"
#include "blocksplat/splitter.hpp"

namespace blocksplat {

void OptimizerState::resize_for(const GaussianCloud& cloud) {
    const size_t n = cloud.size();
    m_pos.assign(3 * n, 0.0); v_pos.assign(3 * n, 0.0);
    m_rot.assign(4 * n, 0.0); v_rot.assign(4 * n, 0.0);
    m_ls.assign(3 * n, 0.0); v_ls.assign(3 * n, 0.0);
    m_feat.assign(n * static_cast<size_t>(cloud.feature_dim()), 0.0);
    v_feat.assign(n * static_cast<size_t>(cloud.feature_dim()), 0.0);
    m_op.assign(n, 0.0); v_op.assign(n, 0.0);
}

namespace {

// Stable compaction matching GaussianCloud::remove_indices, then zero rows
// appended for densified Gaussians.
void edit_array(std::vector<double>& v, const std::vector<char>& drop, size_t width, size_t added) {
    size_t w = 0;
    for (size_t r = 0; r < drop.size(); ++r) {
        if (drop[r]) continue;
        if (w != r)
            for (size_t k = 0; k < width; ++k) v[w * width + k] = v[r * width + k];
        ++w;
    }
    v.resize(w * width);
    v.insert(v.end(), added * width, 0.0);
}

} // namespace

void OptimizerState::remove_and_append(const std::vector<size_t>& drop_idx, size_t added,
                                       int feature_dim) {
    std::vector<char> drop(m_op.size(), 0);
    for (size_t i : drop_idx) drop[i] = 1;
    edit_array(m_pos, drop, 3, added);
    edit_array(v_pos, drop, 3, added);
    edit_array(m_rot, drop, 4, added);
    edit_array(v_rot, drop, 4, added);
    edit_array(m_ls, drop, 3, added);
    edit_array(v_ls, drop, 3, added);
    edit_array(m_feat, drop, static_cast<size_t>(feature_dim), added);
    edit_array(v_feat, drop, static_cast<size_t>(feature_dim), added);
    edit_array(m_op, drop, 1, added);
    edit_array(v_op, drop, 1, added);
}

IdAllocator IdAllocator::for_block(uint32_t block_id, uint64_t initial_count) {
    IdAllocator a;
    const uint64_t base = static_cast<uint64_t>(block_id) << 48;
    a.next = base + (block_id == 0 ? initial_count : 0);
    a.end = (static_cast<uint64_t>(block_id) + 1) << 48;
    return a;
}

uint64_t IdAllocator::allocate() {
    if (next >= end) throw std::runtime_error("id allocator exhausted");
    return next++;
}

GaussianCloud init_cloud_from_points(const std::vector<ScenePoint>& points, int sh_degree,
                                     double init_opacity) {
    if (points.empty()) throw InvalidArgument("empty point set");
    const int fd = sh_degree >= 1 ? kFeatureDimDeg1 : kFeatureDimDeg0;
    const size_t n = points.size();
    GaussianCloud cloud(fd);

    // Mean distance to the 3 nearest neighbors sets the initial footprint.
    std::vector<double> mean_dist(n, 0.1);
    for (size_t i = 0; i < n; ++i) {
        double best[3] = {1e300, 1e300, 1e300};
        const Eigen::Vector3f pi = points[i].position;
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d2 = (points[j].position - pi).squaredNorm();
            if (d2 < best[2]) {
                best[2] = d2;
                if (best[2] < best[1]) std::swap(best[1], best[2]);
                if (best[1] < best[0]) std::swap(best[0], best[1]);
            }
        }
        double sum = 0;
        int cnt = 0;
        for (double b : best)
            if (b < 1e300) {
                sum += std::sqrt(b);
                ++cnt;
            }
        if (cnt > 0) mean_dist[i] = std::max(sum / cnt, 1e-6);
    }

    const double op_logit = logit(init_opacity);
    for (size_t i = 0; i < n; ++i) {
        GaussianPrimitive g;
        g.id = i;
        g.position = points[i].position.cast<double>();
        g.rotation = Vec4(1, 0, 0, 0);
        g.log_scale = Vec3::Constant(std::log(mean_dist[i]));
        g.features.assign(fd, 0.0);
        for (int ch = 0; ch < 3; ++ch) g.features[ch] = (points[i].rgb[ch] / 255.0) / kSh0;
        g.opacity_logit = op_logit;
        cloud.push_back(g);
    }
    return cloud;
}

namespace {

uint64_t derive_seed(uint64_t seed, uint32_t block_id) {
    return seed ^ (0x9e3779b97f4a7c15ull * (static_cast<uint64_t>(block_id) + 1));
}

void adam_step(double* x, const double* g, double* m, double* v, size_t n, double lr,
               uint64_t t, const AdamParams& p) {
    const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
    for (size_t i = 0; i < n; ++i) {
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        x[i] -= lr * mh / (std::sqrt(vh) + p.eps);
    }
}

} // namespace

BlockTrainer::BlockTrainer(uint32_t block_id, GaussianCloud initial, std::vector<TrainView> views,
                           std::vector<uint64_t> shared_ids, uint64_t global_initial_count,
                           const TrainerConfig& cfg)
    : block_id_(block_id),
      cfg_(cfg),
      cloud_(std::move(initial)),
      views_(std::move(views)),
      shared_ids_(std::move(shared_ids)),
      anchor_(cloud_.feature_dim()),
      duals_(cloud_.feature_dim()),
      alloc_(IdAllocator::for_block(block_id, global_initial_count)),
      rng_(derive_seed(cfg.seed, block_id)) {
    if (views_.empty()) throw InvalidArgument("trainer needs at least one view");
    if (!cloud_.check_invariants()) throw InvalidArgument("initial cloud ids not ascending");
    if (cfg_.densify.stop_iteration == 0)
        cfg_.densify.stop_iteration = (cfg_.iterations * 6) / 10;
    std::vector<Vec3> pts(cloud_.size());
    for (size_t i = 0; i < cloud_.size(); ++i) pts[i] = cloud_.position(i);
    if (!pts.empty()) scene_extent_ = std::max(tight_aabb(pts).extent().norm(), 1e-9);
    opt_.resize_for(cloud_);
    grad_accum_.assign(cloud_.size(), 0.0);
    grad_seen_.assign(cloud_.size(), 0);
    view_order_.resize(views_.size());
    for (size_t i = 0; i < view_order_.size(); ++i) view_order_[i] = i;
}

void BlockTrainer::set_anchor(const GaussianCloud& z, const PropertyPenalties& rho) {
    anchor_ = slice_by_ids(z, shared_ids_);
    duals_ = zero_bundle(anchor_.ids, cloud_.feature_dim());
    rho_ = rho;
    have_anchor_ = true;
}

void BlockTrainer::apply_broadcast(const GaussianCloud& z, const std::vector<uint64_t>& reset_ids,
                                   const std::vector<uint64_t>& unshared_ids,
                                   const PropertyPenalties& rho, double alpha, bool over_relaxed) {
    if (!have_anchor_) {
        set_anchor(z, rho);
        return;
    }
    // IDs that stopped being shared leave first; the broadcast no longer
    // carries them, and their duals are dead anyway.
    if (!unshared_ids.empty()) {
        erase_by_ids(duals_, unshared_ids);
        erase_by_ids(anchor_, unshared_ids);
        std::vector<uint64_t> keep;
        keep.reserve(shared_ids_.size());
        std::set_difference(shared_ids_.begin(), shared_ids_.end(), unshared_ids.begin(),
                            unshared_ids.end(), std::back_inserter(keep));
        shared_ids_ = std::move(keep);
    }
    // The relaxed local the master averaged, rebuilt bit-identically from
    // the parameters this block just uploaded and the previous anchor.
    GaussianCloud x_hat = slice_by_ids(cloud_, anchor_.ids);
    if (x_hat.ids != anchor_.ids) throw InvalidArgument("shared rows missing from cloud");
    if (over_relaxed) {
        const int fd = x_hat.feature_dim();
        for (size_t j = 0; j < x_hat.size(); ++j) {
            for (int k = 0; k < 3; ++k) {
                x_hat.positions[3 * j + k] =
                    relaxed_value(x_hat.positions[3 * j + k], anchor_.positions[3 * j + k], alpha);
                x_hat.log_scales[3 * j + k] =
                    relaxed_value(x_hat.log_scales[3 * j + k], anchor_.log_scales[3 * j + k], alpha);
            }
            for (int k = 0; k < 4; ++k)
                x_hat.rotations[4 * j + k] =
                    relaxed_value(x_hat.rotations[4 * j + k], anchor_.rotations[4 * j + k], alpha);
            for (int k = 0; k < fd; ++k)
                x_hat.features[j * fd + k] =
                    relaxed_value(x_hat.features[j * fd + k], anchor_.features[j * fd + k], alpha);
            x_hat.opacity_logits[j] =
                relaxed_value(x_hat.opacity_logits[j], anchor_.opacity_logits[j], alpha);
        }
    }
    dual_update(duals_, x_hat, z);
    for (uint64_t id : reset_ids) {
        const size_t j = duals_.find(id);
        if (j == GaussianCloud::npos) continue;
        const int fd = duals_.feature_dim();
        for (int k = 0; k < 3; ++k) duals_.positions[3 * j + k] = 0.0;
        for (int k = 0; k < 4; ++k) duals_.rotations[4 * j + k] = 0.0;
        for (int k = 0; k < 3; ++k) duals_.log_scales[3 * j + k] = 0.0;
        for (int k = 0; k < fd; ++k) duals_.features[j * fd + k] = 0.0;
        duals_.opacity_logits[j] = 0.0;
    }
    anchor_ = slice_by_ids(z, shared_ids_);
    if (anchor_.ids != duals_.ids) throw InvalidArgument("broadcast misses shared ids");
    rho_ = rho;
}

GaussianCloud BlockTrainer::shared_slice() const { return slice_by_ids(cloud_, shared_ids_); }

GaussianCloud BlockTrainer::nonshared_slice() const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < cloud_.size(); ++i)
        if (!std::binary_search(shared_ids_.begin(), shared_ids_.end(), cloud_.ids[i]))
            idx.push_back(i);
    return cloud_.subset(idx);
}

std::vector<uint64_t> BlockTrainer::take_removed_ids() {
    std::vector<uint64_t> out = std::move(removed_ids_);
    removed_ids_.clear();
    std::sort(out.begin(), out.end());
    return out;
}

GaussianCloud BlockTrainer::take_new_rows() {
    std::sort(new_ids_.begin(), new_ids_.end());
    GaussianCloud rows = slice_by_ids(cloud_, new_ids_);
    new_ids_.clear();
    return rows;
}

double BlockTrainer::train_step() {
    if (view_cursor_ == 0) rng_.shuffle(view_order_);
    const TrainView& view = views_[view_order_[view_cursor_]];
    view_cursor_ = (view_cursor_ + 1) % views_.size();

    BackwardOutput bw = render_backward(cloud_, view.camera, *view.image, cfg_.render);
    double loss = bw.loss;

    if (have_anchor_ && !anchor_.ids.empty()) {
        std::vector<size_t> idx(anchor_.ids.size());
        for (size_t j = 0; j < anchor_.ids.size(); ++j) {
            idx[j] = cloud_.find(anchor_.ids[j]);
            if (idx[j] == GaussianCloud::npos)
                throw InvalidArgument("shared rows missing from cloud");
        }
        loss += penalty_loss_and_grad(cloud_, idx, anchor_, duals_, rho_, bw.grads);
    }

    const uint64_t t = ++opt_.steps;
    const double progress =
        cfg_.iterations > 0 ? static_cast<double>(iteration_) / static_cast<double>(cfg_.iterations)
                            : 0.0;
    const double lr_pos = cfg_.lr.position * std::pow(cfg_.lr.position_decay, progress);
    adam_step(cloud_.positions.data(), bw.grads.positions.data(), opt_.m_pos.data(),
              opt_.v_pos.data(), cloud_.positions.size(), lr_pos, t, cfg_.adam);
    adam_step(cloud_.rotations.data(), bw.grads.rotations.data(), opt_.m_rot.data(),
              opt_.v_rot.data(), cloud_.rotations.size(), cfg_.lr.rotation, t, cfg_.adam);
    adam_step(cloud_.log_scales.data(), bw.grads.log_scales.data(), opt_.m_ls.data(),
              opt_.v_ls.data(), cloud_.log_scales.size(), cfg_.lr.log_scale, t, cfg_.adam);
    adam_step(cloud_.features.data(), bw.grads.features.data(), opt_.m_feat.data(),
              opt_.v_feat.data(), cloud_.features.size(), cfg_.lr.features, t, cfg_.adam);
    adam_step(cloud_.opacity_logits.data(), bw.grads.opacity_logits.data(), opt_.m_op.data(),
              opt_.v_op.data(), cloud_.opacity_logits.size(), cfg_.lr.opacity, t, cfg_.adam);
    cloud_.canonicalize_rotations();

    for (size_t i = 0; i < cloud_.size(); ++i) {
        if (bw.visible[i]) {
            grad_accum_[i] += bw.screen_grad_norm[i];
            ++grad_seen_[i];
        }
    }

    ++iteration_;
    maybe_densify();
    last_loss_ = loss;
    return loss;
}

void BlockTrainer::run_iterations(uint64_t n) {
    for (uint64_t i = 0; i < n; ++i) train_step();
}

void BlockTrainer::maybe_densify() {
    const DensifyConfig& d = cfg_.densify;
    if (!d.enabled || iteration_ == 0) return;
    if (iteration_ % d.interval != 0 || iteration_ > d.stop_iteration) return;

    const double split_scale = d.split_scale_fraction * scene_extent_;
    std::vector<size_t> drop;
    GaussianCloud children(cloud_.feature_dim());

    for (size_t i = 0; i < cloud_.size(); ++i) {
        const uint64_t id = cloud_.ids[i];
        const bool is_shared =
            std::binary_search(shared_ids_.begin(), shared_ids_.end(), id);
        if (cloud_.opacity(i) < d.prune_opacity) {
            drop.push_back(i);
            removed_ids_.push_back(id);
            continue;
        }
        if (grad_seen_[i] == 0) continue;
        const double mean_grad = grad_accum_[i] / grad_seen_[i];
        if (mean_grad < d.grad_threshold) continue;

        GaussianPrimitive parent = cloud_.primitive(i);
        const Vec3 scales = parent.log_scale.array().exp();
        int axis = 0;
        scales.maxCoeff(&axis);
        const Mat3 r = quat_to_rotation(quat_normalized(parent.rotation));
        const Vec3 offset = r.col(axis) * (0.5 * scales[axis]);

        if (scales.maxCoeff() >= split_scale) {
            // Shared Gaussians keep their ID alive across blocks, so they
            // bud a single child instead of splitting in two.
            GaussianPrimitive child = parent;
            child.log_scale = parent.log_scale.array() - std::log(d.split_shrink);
            if (is_shared) {
                child.id = alloc_.allocate();
                child.position = parent.position + offset;
                children.push_back(child);
                new_ids_.push_back(child.id);
            } else {
                drop.push_back(i);
                removed_ids_.push_back(id);
                for (int s = 0; s < 2; ++s) {
                    child.id = alloc_.allocate();
                    child.position = parent.position + (s == 0 ? offset : Vec3(-offset));
                    children.push_back(child);
                    new_ids_.push_back(child.id);
                }
            }
        } else {
            GaussianPrimitive clone = parent;
            clone.id = alloc_.allocate();
            children.push_back(clone);
            new_ids_.push_back(clone.id);
        }
    }
    if (drop.empty() && children.empty()) {
        std::fill(grad_accum_.begin(), grad_accum_.end(), 0.0);
        std::fill(grad_seen_.begin(), grad_seen_.end(), 0);
        return;
    }

    // Pruned shared IDs leave the consensus immediately; the master learns
    // from the next upload's removed-ID list.
    if (!removed_ids_.empty() && !shared_ids_.empty()) {
        std::vector<uint64_t> gone = removed_ids_;
        std::sort(gone.begin(), gone.end());
        std::vector<uint64_t> keep;
        std::set_difference(shared_ids_.begin(), shared_ids_.end(), gone.begin(), gone.end(),
                            std::back_inserter(keep));
        if (keep.size() != shared_ids_.size()) {
            shared_ids_ = std::move(keep);
            erase_by_ids(anchor_, gone);
            erase_by_ids(duals_, gone);
        }
    }

    cloud_.remove_indices(drop);
    opt_.remove_and_append(drop, children.size(), cloud_.feature_dim());
    for (size_t j = 0; j < children.size(); ++j) cloud_.push_back(children.primitive(j));
    if (!cloud_.check_invariants()) throw std::runtime_error("cloud invariant broken by densify");

    grad_accum_.assign(cloud_.size(), 0.0);
    grad_seen_.assign(cloud_.size(), 0);
}

GaussianCloud train_centralized(const std::vector<ScenePoint>& points,
                                const std::vector<TrainView>& views, const TrainerConfig& cfg) {
    GaussianCloud init = init_cloud_from_points(points, cfg.sh_degree, cfg.init_opacity);
    const uint64_t n0 = init.size();
    BlockTrainer trainer(0, std::move(init), views, {}, n0, cfg);
    trainer.run_iterations(cfg.iterations);
    return trainer.cloud();
}

} // namespace blocksplat
