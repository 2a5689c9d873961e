#include "blocksplat/admm.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "blocksplat/errors.hpp"

namespace blocksplat {

double penalty_loss_and_grad(const GaussianCloud& cloud, const std::vector<size_t>& idx,
                             const ParamBundle& z, const ParamBundle& u,
                             const PropertyPenalties& rho, ParamGradients& grads) {
    if (z.size() != idx.size() || u.size() != idx.size())
        throw InvalidArgument("id misalignment");
    if (z.feature_dim() != cloud.feature_dim() || u.feature_dim() != cloud.feature_dim())
        throw InvalidArgument("feature vector width mismatch");
    const int fd = cloud.feature_dim();
    double loss = 0;
    for (size_t j = 0; j < idx.size(); ++j) {
        const size_t i = idx[j];
        if (cloud.ids[i] != z.ids[j] || z.ids[j] != u.ids[j])
            throw InvalidArgument("id misalignment");
        auto accumulate = [&loss](double r, double x, double zv, double uv, double* g) {
            const double d = x - zv + uv;
            loss += 0.5 * r * d * d;
            *g += r * d;
        };
        for (int k = 0; k < 3; ++k)
            accumulate(rho.rho_p, cloud.positions[3 * i + k], z.positions[3 * j + k],
                       u.positions[3 * j + k], &grads.positions[3 * i + k]);
        for (int k = 0; k < 4; ++k)
            accumulate(rho.rho_q, cloud.rotations[4 * i + k], z.rotations[4 * j + k],
                       u.rotations[4 * j + k], &grads.rotations[4 * i + k]);
        for (int k = 0; k < 3; ++k)
            accumulate(rho.rho_s, cloud.log_scales[3 * i + k], z.log_scales[3 * j + k],
                       u.log_scales[3 * j + k], &grads.log_scales[3 * i + k]);
        for (int k = 0; k < fd; ++k)
            accumulate(rho.rho_f, cloud.features[i * fd + k], z.features[j * fd + k],
                       u.features[j * fd + k], &grads.features[i * fd + k]);
        accumulate(rho.rho_o, cloud.opacity_logits[i], z.opacity_logits[j],
                   u.opacity_logits[j], &grads.opacity_logits[i]);
    }
    return loss;
}

namespace {

struct Contributor {
    uint32_t block_id;
    const GaussianCloud* cloud;
    size_t row;
};

// id -> contributors in ascending block_id order.
std::map<uint64_t, std::vector<Contributor>> gather(const std::vector<BlockContribution>& locals) {
    std::vector<BlockContribution> ordered = locals;
    std::sort(ordered.begin(), ordered.end(),
              [](const BlockContribution& a, const BlockContribution& b) {
                  return a.block_id < b.block_id;
              });
    std::map<uint64_t, std::vector<Contributor>> owners;
    for (const BlockContribution& bc : ordered)
        for (size_t r = 0; r < bc.params->size(); ++r)
            owners[bc.params->ids[r]].push_back({bc.block_id, bc.params, r});
    return owners;
}

} // namespace

GaussianCloud consensus_average(const std::vector<BlockContribution>& locals,
                                bool over_relaxed, const GaussianCloud& z_prev, double alpha,
                                std::vector<uint64_t>* flipped_ids) {
    if (locals.empty()) throw InvalidArgument("no block contributions");
    const int fd = locals[0].params->feature_dim();
    for (const BlockContribution& bc : locals)
        if (bc.params->feature_dim() != fd)
            throw InvalidArgument("feature vector width mismatch");
    const double a = over_relaxed ? alpha : 1.0;

    const auto owners = gather(locals);
    GaussianCloud z(fd);
    z.ids.reserve(owners.size());

    std::vector<double> feat_sum(static_cast<size_t>(fd));
    for (const auto& [id, who] : owners) {
        const size_t zp = z_prev.find(id);
        const bool blend = zp != GaussianCloud::npos;
        auto rv = [&](double x, double prev) { return blend ? relaxed_value(x, prev, a) : x; };

        Vec3 pos = Vec3::Zero(), ls = Vec3::Zero();
        Vec4 rot = Vec4::Zero();
        std::fill(feat_sum.begin(), feat_sum.end(), 0.0);
        double op = 0;
        Vec4 q_ref = Vec4::Zero();
        bool flipped = false;
        for (size_t c = 0; c < who.size(); ++c) {
            const GaussianCloud& src = *who[c].cloud;
            const size_t r = who[c].row;
            Vec4 q = src.rotation(r);
            if (c == 0) {
                q_ref = q;
            } else if (q.dot(q_ref) < 0.0) {
                q = -q;
                flipped = true;
            }
            for (int k = 0; k < 3; ++k) {
                pos[k] += rv(src.positions[3 * r + k], blend ? z_prev.positions[3 * zp + k] : 0.0);
                ls[k] += rv(src.log_scales[3 * r + k], blend ? z_prev.log_scales[3 * zp + k] : 0.0);
            }
            for (int k = 0; k < 4; ++k)
                rot[k] += rv(q[k], blend ? z_prev.rotations[4 * zp + k] : 0.0);
            for (int k = 0; k < fd; ++k)
                feat_sum[k] += rv(src.features[r * fd + k], blend ? z_prev.features[zp * fd + k] : 0.0);
            op += rv(src.opacity_logits[r], blend ? z_prev.opacity_logits[zp] : 0.0);
        }
        const double inv = 1.0 / static_cast<double>(who.size());
        z.ids.push_back(id);
        for (int k = 0; k < 3; ++k) z.positions.push_back(pos[k] * inv);
        for (int k = 0; k < 4; ++k) z.rotations.push_back(rot[k] * inv);
        for (int k = 0; k < 3; ++k) z.log_scales.push_back(ls[k] * inv);
        for (int k = 0; k < fd; ++k) z.features.push_back(feat_sum[k] * inv);
        z.opacity_logits.push_back(op * inv);
        if (flipped && flipped_ids) flipped_ids->push_back(id);
    }
    return z;
}

void dual_update(ParamBundle& u, const GaussianCloud& x_hat, const GaussianCloud& z) {
    if (u.ids != x_hat.ids) throw InvalidArgument("id misalignment");
    const int fd = u.feature_dim();
    for (size_t j = 0; j < u.size(); ++j) {
        const size_t zi = z.find(u.ids[j]);
        if (zi == GaussianCloud::npos) throw InvalidArgument("id missing from consensus model");
        for (int k = 0; k < 3; ++k) {
            u.positions[3 * j + k] += x_hat.positions[3 * j + k] - z.positions[3 * zi + k];
            u.log_scales[3 * j + k] += x_hat.log_scales[3 * j + k] - z.log_scales[3 * zi + k];
        }
        for (int k = 0; k < 4; ++k)
            u.rotations[4 * j + k] += x_hat.rotations[4 * j + k] - z.rotations[4 * zi + k];
        for (int k = 0; k < fd; ++k)
            u.features[j * fd + k] += x_hat.features[j * fd + k] - z.features[zi * fd + k];
        u.opacity_logits[j] += x_hat.opacity_logits[j] - z.opacity_logits[zi];
    }
}

ResidualNorms residuals(const std::vector<BlockContribution>& locals,
                        const GaussianCloud& z_new, const GaussianCloud& z_prev,
                        const PropertyPenalties& rho) {
    ResidualNorms out;
    const int fd = z_new.feature_dim();
    double p2 = 0;
    for (const BlockContribution& bc : locals) {
        const GaussianCloud& x = *bc.params;
        for (size_t r = 0; r < x.size(); ++r) {
            const size_t zi = z_new.find(x.ids[r]);
            if (zi == GaussianCloud::npos) throw InvalidArgument("id missing from consensus model");
            for (int k = 0; k < 3; ++k) {
                const double dp = x.positions[3 * r + k] - z_new.positions[3 * zi + k];
                const double ds = x.log_scales[3 * r + k] - z_new.log_scales[3 * zi + k];
                p2 += dp * dp + ds * ds;
            }
            for (int k = 0; k < 4; ++k) {
                const double d = x.rotations[4 * r + k] - z_new.rotations[4 * zi + k];
                p2 += d * d;
            }
            for (int k = 0; k < fd; ++k) {
                const double d = x.features[r * fd + k] - z_new.features[zi * fd + k];
                p2 += d * d;
            }
            const double d = x.opacity_logits[r] - z_new.opacity_logits[zi];
            p2 += d * d;
        }
    }
    double d2 = 0;
    for (size_t i = 0; i < z_new.size(); ++i) {
        const size_t j = z_prev.find(z_new.ids[i]);
        if (j == GaussianCloud::npos) continue;
        for (int k = 0; k < 3; ++k) {
            const double dp = rho.rho_p * (z_new.positions[3 * i + k] - z_prev.positions[3 * j + k]);
            const double ds = rho.rho_s * (z_new.log_scales[3 * i + k] - z_prev.log_scales[3 * j + k]);
            d2 += dp * dp + ds * ds;
        }
        for (int k = 0; k < 4; ++k) {
            const double d = rho.rho_q * (z_new.rotations[4 * i + k] - z_prev.rotations[4 * j + k]);
            d2 += d * d;
        }
        for (int k = 0; k < fd; ++k) {
            const double d = rho.rho_f * (z_new.features[i * fd + k] - z_prev.features[j * fd + k]);
            d2 += d * d;
        }
        const double d = rho.rho_o * (z_new.opacity_logits[i] - z_prev.opacity_logits[j]);
        d2 += d * d;
    }
    out.primal = std::sqrt(p2);
    out.dual = std::sqrt(d2);
    return out;
}

PropertyPenalties adapt_penalties(const PropertyPenalties& rho, double primal_norm,
                                  double dual_norm, const ConsensusConfig& cfg,
                                  uint64_t iteration) {
    if (!cfg.adaptive || iteration > cfg.freeze_iteration) return rho;
    PropertyPenalties out = rho;
    auto scale_all = [&out](double f) {
        out.rho_p *= f;
        out.rho_q *= f;
        out.rho_s *= f;
        out.rho_f *= f;
        out.rho_o *= f;
    };
    if (primal_norm > cfg.mu * dual_norm)
        scale_all(cfg.tau_inc);
    else if (dual_norm > cfg.mu * primal_norm)
        scale_all(1.0 / cfg.tau_dec);
    return out;
}

double max_disagreement(const std::vector<BlockContribution>& locals) {
    const auto owners = gather(locals);
    double worst = 0;
    for (const auto& [id, who] : owners) {
        if (who.size() < 2) continue;
        const int fd = who[0].cloud->feature_dim();
        auto spread = [&](auto getter, int count) {
            for (int k = 0; k < count; ++k) {
                double lo = getter(*who[0].cloud, who[0].row, k), hi = lo;
                for (size_t c = 1; c < who.size(); ++c) {
                    const double v = getter(*who[c].cloud, who[c].row, k);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                worst = std::max(worst, hi - lo);
            }
        };
        spread([](const GaussianCloud& c, size_t r, int k) { return c.positions[3 * r + k]; }, 3);
        spread([](const GaussianCloud& c, size_t r, int k) { return c.rotations[4 * r + k]; }, 4);
        spread([](const GaussianCloud& c, size_t r, int k) { return c.log_scales[3 * r + k]; }, 3);
        spread([fd](const GaussianCloud& c, size_t r, int k) { return c.features[r * fd + k]; }, fd);
        spread([](const GaussianCloud& c, size_t r, int) { return c.opacity_logits[r]; }, 1);
    }
    return worst;
}

} // namespace blocksplat
