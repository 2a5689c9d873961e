#pragma once

#include <cstdint>
#include <vector>

#include "blocksplat/cloud.hpp"
#include "blocksplat/renderer.hpp"

namespace blocksplat {

// One penalty weight per Gaussian property.
struct PropertyPenalties {
    double rho_p = 1e4; // position
    double rho_q = 1e4; // quaternion
    double rho_s = 1e4; // log-scale
    double rho_f = 1e3; // color features
    double rho_o = 1e4; // opacity logit
};

struct ConsensusConfig {
    uint32_t interval = 100;      // iterations between consensus rounds
    double mu = 10.0;             // residual ratio triggering adaptation
    double tau_inc = 2.0;
    double tau_dec = 2.0;
    double alpha = 1.6;           // over-relaxation, 1 disables
    uint64_t freeze_iteration = 2000; // penalties stop adapting after this
    bool adaptive = true;
    bool enabled = true; // false: blocks train independently, duals stay zero
};

// Dual variables and consensus values reuse the cloud layout: one row per
// shared ID, arrays in the optimization parameterization.
using ParamBundle = GaussianCloud;
using GlobalModel = GaussianCloud;

// Over-relaxed local value fed to both the averaging and the dual update.
// alpha == 1 returns x bitwise, so relaxation off is exactly the plain rule.
inline double relaxed_value(double x, double z_prev, double alpha) {
    if (alpha == 1.0) return x;
    return alpha * x + (1.0 - alpha) * z_prev;
}

// Quadratic consensus penalty: sum over properties of
// (rho/2) * |x - z + u|^2, evaluated at cloud rows `idx` (row j of z and u
// must carry the same ID as cloud row idx[j]). The gradient rho*(x - z + u)
// accumulates into `grads` at the same rows. Returns the penalty value.
double penalty_loss_and_grad(const GaussianCloud& cloud, const std::vector<size_t>& idx,
                             const ParamBundle& z, const ParamBundle& u,
                             const PropertyPenalties& rho, ParamGradients& grads);

struct BlockContribution {
    uint32_t block_id = 0;
    const GaussianCloud* params = nullptr; // the block's shared-ID slice
};

// Per-ID mean over owning blocks, blocks visited in ascending block_id.
// When over_relaxed, each local is first blended with z_prev's entry for
// that ID (IDs absent from z_prev stay unblended). Quaternions are
// sign-aligned to the first contributor before averaging; the mean is NOT
// renormalized here because the dual update must see the exact average
// (unit length is restored where a rotation matrix is actually built).
// IDs whose quaternions required a sign flip are appended to flipped_ids
// when given; their duals must be reset by the caller.
GaussianCloud consensus_average(const std::vector<BlockContribution>& locals,
                                bool over_relaxed, const GaussianCloud& z_prev, double alpha,
                                std::vector<uint64_t>* flipped_ids = nullptr);

// u <- u + x_hat - z per property. u and x_hat must carry identical IDs;
// every ID must exist in z.
void dual_update(ParamBundle& u, const GaussianCloud& x_hat, const GaussianCloud& z);

struct ResidualNorms {
    double primal = 0; // |x - z_new| stacked over blocks and IDs
    double dual = 0;   // |rho_pi (z_new - z_prev)| stacked per property
};

ResidualNorms residuals(const std::vector<BlockContribution>& locals,
                        const GaussianCloud& z_new, const GaussianCloud& z_prev,
                        const PropertyPenalties& rho);

// Standard residual-balancing rule; inert after freeze_iteration or when
// adaptation is disabled.
PropertyPenalties adapt_penalties(const PropertyPenalties& rho, double primal_norm,
                                  double dual_norm, const ConsensusConfig& cfg,
                                  uint64_t iteration);

// Largest per-component spread (max - min) across owning blocks over all
// IDs held by two or more contributors. Zero when nothing is shared.
double max_disagreement(const std::vector<BlockContribution>& locals);

} // namespace blocksplat
