#pragma once

#include <cstdint>
#include <vector>

#include "blocksplat/admm.hpp"
#include "blocksplat/cloud.hpp"
#include "blocksplat/renderer.hpp"
#include "blocksplat/scene.hpp"

namespace blocksplat {

struct LearningRates {
    double position = 1.6e-4;
    double position_decay = 0.01; // multiplier reached at the final iteration
    double rotation = 1e-3;
    double log_scale = 5e-3;
    double features = 2.5e-3;
    double opacity = 5e-2;
};

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment accumulators, row-aligned with the cloud.
struct OptimizerState {
    std::vector<double> m_pos, v_pos;
    std::vector<double> m_rot, v_rot;
    std::vector<double> m_ls, v_ls;
    std::vector<double> m_feat, v_feat;
    std::vector<double> m_op, v_op;
    uint64_t steps = 0;

    void resize_for(const GaussianCloud& cloud);
    // Mirrors a cloud edit: drops the given rows then appends `added`
    // zero-initialized rows.
    void remove_and_append(const std::vector<size_t>& drop, size_t added, int feature_dim);
};

struct DensifyConfig {
    bool enabled = true;
    uint32_t interval = 200;
    uint64_t stop_iteration = 0; // 0 resolves to 60% of total iterations
    double grad_threshold = 2e-4; // mean screen-space gradient norm (NDC)
    double prune_opacity = 0.005;
    double split_scale_fraction = 0.01; // of scene extent: clone below, split above
    double split_shrink = 1.6;
};

struct TrainerConfig {
    uint64_t iterations = 3000;
    uint64_t seed = 0;
    int sh_degree = 0;
    double init_opacity = 0.1;
    LearningRates lr;
    AdamParams adam;
    DensifyConfig densify;
    RenderConfig render;
};

// Block-disjoint ID ranges: block k hands out [k * 2^48, (k+1) * 2^48).
// Block 0 starts past the initial cloud's IDs, which occupy its range.
struct IdAllocator {
    uint64_t next = 0;
    uint64_t end = 0;

    static IdAllocator for_block(uint32_t block_id, uint64_t initial_count);
    uint64_t allocate();
};

// Positions from the points, color features inverting the constant SH band,
// isotropic scale from the mean distance to the 3 nearest neighbors,
// identity rotation, uniform opacity. IDs are 0..n-1.
GaussianCloud init_cloud_from_points(const std::vector<ScenePoint>& points, int sh_degree,
                                     double init_opacity);

struct TrainView {
    CameraView camera;
    const Image* image = nullptr; // ground truth, owned by the caller
};

// Optimizes one block's cloud against its views, with an optional consensus
// penalty on the shared subset. Owns the dual variables and the consensus
// anchor; the cluster runtime drives it between barriers.
class BlockTrainer {
public:
    BlockTrainer(uint32_t block_id, GaussianCloud initial, std::vector<TrainView> views,
                 std::vector<uint64_t> shared_ids, uint64_t global_initial_count,
                 const TrainerConfig& cfg);

    double train_step();
    void run_iterations(uint64_t n);

    // First broadcast: installs the consensus anchor and zero duals without
    // touching them further.
    void set_anchor(const GaussianCloud& z, const PropertyPenalties& rho);

    // Subsequent broadcasts: updates duals against the previous anchor using
    // the same relaxed local the master averaged, applies dual resets, drops
    // IDs that stopped being shared, then installs the new anchor.
    void apply_broadcast(const GaussianCloud& z, const std::vector<uint64_t>& reset_ids,
                         const std::vector<uint64_t>& unshared_ids, const PropertyPenalties& rho,
                         double alpha, bool over_relaxed);

    const GaussianCloud& cloud() const { return cloud_; }
    GaussianCloud shared_slice() const;
    GaussianCloud nonshared_slice() const;
    const ParamBundle& duals() const { return duals_; }
    const GaussianCloud& anchor() const { return anchor_; }
    const std::vector<uint64_t>& shared_ids() const { return shared_ids_; }
    uint64_t iteration() const { return iteration_; }
    double last_loss() const { return last_loss_; }
    uint32_t block_id() const { return block_id_; }

    // IDs pruned or replaced since the last call (consumed).
    std::vector<uint64_t> take_removed_ids();
    // Rows densified into existence since the last call (consumed).
    GaussianCloud take_new_rows();

private:
    void maybe_densify();

    uint32_t block_id_;
    TrainerConfig cfg_;
    GaussianCloud cloud_;
    std::vector<TrainView> views_;
    std::vector<uint64_t> shared_ids_; // ascending, shrinks only
    GaussianCloud anchor_;             // consensus values for shared ids
    ParamBundle duals_;
    PropertyPenalties rho_;
    bool have_anchor_ = false;

    OptimizerState opt_;
    IdAllocator alloc_;
    Rng rng_;
    std::vector<size_t> view_order_;
    size_t view_cursor_ = 0;
    uint64_t iteration_ = 0;
    double last_loss_ = 0;
    double scene_extent_ = 1.0;

    std::vector<double> grad_accum_;
    std::vector<uint32_t> grad_seen_;
    std::vector<uint64_t> removed_ids_;
    std::vector<uint64_t> new_ids_;
};

// Single-block training with no consensus term; the distributed path with
// K = 1 reduces to exactly this.
GaussianCloud train_centralized(const std::vector<ScenePoint>& points,
                                const std::vector<TrainView>& views, const TrainerConfig& cfg);

} // namespace blocksplat
