#include "blocksplat/renderer.hpp"

#include <algorithm>
#include <cmath>

#include "blocksplat/errors.hpp"
#include "blocksplat/ssim.hpp"

namespace blocksplat {

namespace {

// Local affine Jacobian of the pinhole map at camera-space point p.
Mat23 projection_jacobian(const CameraView& cam, const Vec3& p) {
    const double z = p.z(), iz = 1.0 / z, iz2 = iz * iz;
    Mat23 j;
    j << cam.fx * iz, 0, -cam.fx * p.x() * iz2,
         0, cam.fy * iz, -cam.fy * p.y() * iz2;
    return j;
}

double max_eigenvalue_2x2(const Mat2& m) {
    const double mid = 0.5 * (m(0, 0) + m(1, 1));
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    return mid + std::sqrt(std::max(0.0, mid * mid - det));
}

struct PixelRect {
    int x0, x1, y0, y1; // inclusive, empty when x0 > x1
};

// Integer sample coordinates covered by the sigma_extent footprint.
PixelRect footprint(const Vec2& mean, double radius, uint32_t w, uint32_t h) {
    PixelRect r;
    r.x0 = std::max(0, static_cast<int>(std::ceil(mean.x() - radius)));
    r.x1 = std::min(static_cast<int>(w) - 1, static_cast<int>(std::floor(mean.x() + radius)));
    r.y0 = std::max(0, static_cast<int>(std::ceil(mean.y() - radius)));
    r.y1 = std::min(static_cast<int>(h) - 1, static_cast<int>(std::floor(mean.y() + radius)));
    return r;
}

// Everything compositing needs per surviving Gaussian.
struct Splat {
    ProjectedGaussian pg;
    Mat2 minv;       // inverse of cov2d
    Vec3 color;
    double opacity;  // sigmoid of the logit
    PixelRect rect;
};

// exp(-1/2 d^T Minv d) at an integer pixel sample. Factored so forward and
// backward recompute bit-identical values.
inline double splat_weight(const Splat& s, int px, int py, Vec2& d_out) {
    d_out = Vec2(px - s.pg.mean2d.x(), py - s.pg.mean2d.y());
    const Vec2& d = d_out;
    const double q = d.x() * (s.minv(0, 0) * d.x() + s.minv(0, 1) * d.y()) +
                     d.y() * (s.minv(1, 0) * d.x() + s.minv(1, 1) * d.y());
    return std::exp(-0.5 * q);
}

// Projects every Gaussian and returns survivors sorted by (depth, index) so
// per-pixel bins inherit the compositing order.
std::vector<Splat> project_cloud(const GaussianCloud& cloud, const CameraView& cam,
                                 const RenderConfig& cfg) {
    std::vector<Splat> splats;
    splats.reserve(cloud.size());
    const Vec3 cam_center = cam.center();
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 pos = cloud.position(i);
        const Mat3 sigma = covariance_from_params(cloud.rotation(i), cloud.log_scale(i));
        auto proj = project_gaussian(pos, sigma, cam, cfg);
        if (!proj) continue;
        Splat s;
        s.pg = *proj;
        s.pg.gaussian_index = i;
        const double det = s.pg.cov2d(0, 0) * s.pg.cov2d(1, 1) - s.pg.cov2d(0, 1) * s.pg.cov2d(1, 0);
        s.minv << s.pg.cov2d(1, 1) / det, -s.pg.cov2d(0, 1) / det,
                  -s.pg.cov2d(1, 0) / det, s.pg.cov2d(0, 0) / det;
        s.color = sh_color(cloud.features.data() + i * cloud.feature_dim(), cloud.feature_dim(),
                           pos - cam_center);
        s.opacity = cloud.opacity(i);
        const double radius = cfg.sigma_extent * std::sqrt(max_eigenvalue_2x2(s.pg.cov2d));
        s.rect = footprint(s.pg.mean2d, radius, cam.width, cam.height);
        splats.push_back(s);
    }
    std::stable_sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
        if (a.pg.depth != b.pg.depth) return a.pg.depth < b.pg.depth;
        return a.pg.gaussian_index < b.pg.gaussian_index;
    });
    return splats;
}

// Per-pixel contributor lists in compositing order (CSR layout).
struct PixelBins {
    std::vector<uint32_t> offsets; // size pixels + 1
    std::vector<uint32_t> entries; // splat indices
};

PixelBins bin_splats(const std::vector<Splat>& splats, uint32_t w, uint32_t h) {
    PixelBins bins;
    const size_t pixels = static_cast<size_t>(w) * h;
    bins.offsets.assign(pixels + 1, 0);
    for (const Splat& s : splats)
        for (int y = s.rect.y0; y <= s.rect.y1; ++y)
            for (int x = s.rect.x0; x <= s.rect.x1; ++x)
                ++bins.offsets[static_cast<size_t>(y) * w + x + 1];
    for (size_t i = 1; i < bins.offsets.size(); ++i) bins.offsets[i] += bins.offsets[i - 1];
    bins.entries.resize(bins.offsets.back());
    std::vector<uint32_t> cursor(bins.offsets.begin(), bins.offsets.end() - 1);
    for (uint32_t si = 0; si < splats.size(); ++si) {
        const Splat& s = splats[si];
        for (int y = s.rect.y0; y <= s.rect.y1; ++y)
            for (int x = s.rect.x0; x <= s.rect.x1; ++x)
                bins.entries[cursor[static_cast<size_t>(y) * w + x]++] = si;
    }
    return bins;
}

} // namespace

std::optional<ProjectedGaussian> project_gaussian(const Vec3& position, const Mat3& covariance,
                                                  const CameraView& cam, const RenderConfig& cfg) {
    const Vec3 p_cam = cam.to_camera(position);
    if (p_cam.z() <= cfg.near_plane) return std::nullopt;
    ProjectedGaussian out;
    out.depth = p_cam.z();
    out.mean2d = cam.project(p_cam);
    const Mat23 a = projection_jacobian(cam, p_cam) * cam.rotation;
    out.cov2d = a * covariance * a.transpose() + cfg.dilation * Mat2::Identity();
    const double radius = cfg.sigma_extent * std::sqrt(max_eigenvalue_2x2(out.cov2d));
    const PixelRect r = footprint(out.mean2d, radius, cam.width, cam.height);
    if (r.x0 > r.x1 || r.y0 > r.y1) return std::nullopt;
    return out;
}

std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g,
                                                  const CameraView& cam,
                                                  const RenderConfig& cfg) {
    return project_gaussian(g.position, covariance_from_params(g.rotation, g.log_scale), cam, cfg);
}

void ParamGradients::resize_for(const GaussianCloud& cloud) {
    positions.assign(3 * cloud.size(), 0.0);
    rotations.assign(4 * cloud.size(), 0.0);
    log_scales.assign(3 * cloud.size(), 0.0);
    features.assign(cloud.size() * static_cast<size_t>(cloud.feature_dim()), 0.0);
    opacity_logits.assign(cloud.size(), 0.0);
}

RenderOutput render(const GaussianCloud& cloud, const CameraView& cam, const RenderConfig& cfg) {
    RenderOutput out;
    out.color = Image(cam.width, cam.height);
    const size_t pixels = out.color.pixel_count();
    out.transmittance.assign(pixels, 1.0);
    out.contributors.assign(pixels, 0);

    const std::vector<Splat> splats = project_cloud(cloud, cam, cfg);
    const PixelBins bins = bin_splats(splats, cam.width, cam.height);

    for (uint32_t y = 0; y < cam.height; ++y) {
        for (uint32_t x = 0; x < cam.width; ++x) {
            const size_t px = static_cast<size_t>(y) * cam.width + x;
            double t = 1.0;
            Vec3 c = Vec3::Zero();
            uint32_t n = 0;
            for (uint32_t e = bins.offsets[px]; e < bins.offsets[px + 1]; ++e) {
                if (t < cfg.transmittance_stop) break;
                const Splat& s = splats[bins.entries[e]];
                Vec2 d;
                const double g = splat_weight(s, static_cast<int>(x), static_cast<int>(y), d);
                const double alpha = std::min(s.opacity * g, cfg.alpha_clamp);
                c += s.color * (alpha * t);
                t *= 1.0 - alpha;
                ++n;
            }
            c += t * cfg.background;
            for (int ch = 0; ch < 3; ++ch) out.color.at(x, y, ch) = c[ch];
            out.transmittance[px] = t;
            out.contributors[px] = n;
        }
    }
    return out;
}

double loss_value(const Image& rendered, const Image& gt, double lambda) {
    if (rendered.width != gt.width || rendered.height != gt.height)
        throw InvalidArgument("image dimension mismatch");
    double l1 = 0;
    for (size_t i = 0; i < rendered.data.size(); ++i) l1 += std::abs(rendered.data[i] - gt.data[i]);
    l1 /= static_cast<double>(rendered.data.size());
    return l1 + lambda * (1.0 - ssim(rendered, gt));
}

namespace {

// Gradient of the rotation matrix with respect to each unit-quaternion
// component (w, x, y, z).
void rotation_quat_jacobian(const Vec4& q, Mat3 dr[4]) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    dr[0] << 0, -z, y,
             z, 0, -x,
             -y, x, 0;
    dr[1] << 0, y, z,
             y, -2 * x, -w,
             z, w, -2 * x;
    dr[2] << -2 * y, x, w,
             x, 0, z,
             -w, z, -2 * y;
    dr[3] << -2 * z, -w, x,
             w, -2 * z, y,
             x, y, 0;
    for (int k = 0; k < 4; ++k) dr[k] *= 2.0;
}

} // namespace

BackwardOutput render_backward(const GaussianCloud& cloud, const CameraView& cam,
                               const Image& gt, const RenderConfig& cfg) {
    if (gt.width != cam.width || gt.height != cam.height)
        throw InvalidArgument("image dimension mismatch");

    BackwardOutput out;
    out.grads.resize_for(cloud);
    out.screen_grad_norm.assign(cloud.size(), 0.0);
    out.visible.assign(cloud.size(), 0);

    const std::vector<Splat> splats = project_cloud(cloud, cam, cfg);
    const PixelBins bins = bin_splats(splats, cam.width, cam.height);
    const size_t pixels = static_cast<size_t>(cam.width) * cam.height;

    // Forward pass, keeping final transmittance and processed counts so the
    // reverse sweep can rewind the compositing recurrence.
    out.rendered = Image(cam.width, cam.height);
    std::vector<double> t_final(pixels, 1.0);
    std::vector<uint32_t> processed(pixels, 0);
    for (uint32_t y = 0; y < cam.height; ++y) {
        for (uint32_t x = 0; x < cam.width; ++x) {
            const size_t px = static_cast<size_t>(y) * cam.width + x;
            double t = 1.0;
            Vec3 c = Vec3::Zero();
            uint32_t n = 0;
            for (uint32_t e = bins.offsets[px]; e < bins.offsets[px + 1]; ++e) {
                if (t < cfg.transmittance_stop) break;
                const Splat& s = splats[bins.entries[e]];
                Vec2 d;
                const double g = splat_weight(s, static_cast<int>(x), static_cast<int>(y), d);
                const double alpha = std::min(s.opacity * g, cfg.alpha_clamp);
                c += s.color * (alpha * t);
                t *= 1.0 - alpha;
                ++n;
            }
            c += t * cfg.background;
            for (int ch = 0; ch < 3; ++ch) out.rendered.at(x, y, ch) = c[ch];
            t_final[px] = t;
            processed[px] = n;
        }
    }

    // Loss and its image-space gradient.
    Image dssim_dx;
    out.ssim = ssim_with_gradient(out.rendered, gt, dssim_dx);
    double l1 = 0;
    Image dl_dc(cam.width, cam.height);
    const double inv_count = 1.0 / static_cast<double>(out.rendered.data.size());
    for (size_t i = 0; i < out.rendered.data.size(); ++i) {
        const double diff = out.rendered.data[i] - gt.data[i];
        l1 += std::abs(diff);
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        dl_dc.data[i] = sign * inv_count - cfg.lambda * dssim_dx.data[i];
    }
    out.l1 = l1 * inv_count;
    out.loss = out.l1 + cfg.lambda * (1.0 - out.ssim);

    // Reverse compositing sweep. Accumulates image-space gradients per splat.
    std::vector<Vec2> g_mean(splats.size(), Vec2::Zero());
    std::vector<Mat2> g_cov(splats.size(), Mat2::Zero());
    std::vector<Vec3> g_color(splats.size(), Vec3::Zero());
    std::vector<double> g_opacity(splats.size(), 0.0);
    for (uint32_t y = 0; y < cam.height; ++y) {
        for (uint32_t x = 0; x < cam.width; ++x) {
            const size_t px = static_cast<size_t>(y) * cam.width + x;
            const uint32_t n = processed[px];
            if (n == 0) continue;
            const Vec3 dldc(dl_dc.at(x, y, 0), dl_dc.at(x, y, 1), dl_dc.at(x, y, 2));
            double t_run = t_final[px];
            Vec3 suffix = t_run * cfg.background; // contributions behind entry i
            const uint32_t base = bins.offsets[px];
            for (uint32_t k = n; k-- > 0;) {
                const uint32_t si = bins.entries[base + k];
                const Splat& s = splats[si];
                Vec2 d;
                const double g = splat_weight(s, static_cast<int>(x), static_cast<int>(y), d);
                const double alpha = std::min(s.opacity * g, cfg.alpha_clamp);
                const double t_before = t_run / (1.0 - alpha);
                g_color[si] += dldc * (alpha * t_before);
                const double dl_dalpha =
                    dldc.dot(s.color * t_before - suffix / (1.0 - alpha));
                if (s.opacity * g < cfg.alpha_clamp) {
                    // alpha = o * g; through g both the mean and the inverse
                    // covariance carry gradient.
                    const double dl_dg = dl_dalpha * s.opacity;
                    const Vec2 md = s.minv * d;
                    g_mean[si] += dl_dg * g * md;
                    g_cov[si] += (0.5 * dl_dg * g) * (md * md.transpose());
                    g_opacity[si] += dl_dalpha * g;
                }
                suffix += s.color * (alpha * t_before);
                t_run = t_before;
            }
        }
    }

    // Fold image-space gradients back to the parameter arrays.
    const Vec3 cam_center = cam.center();
    const int fdim = cloud.feature_dim();
    for (size_t si = 0; si < splats.size(); ++si) {
        const Splat& s = splats[si];
        const size_t i = s.pg.gaussian_index;
        out.visible[i] = 1;

        const Vec3 pos = cloud.position(i);
        const Vec3 p_cam = cam.to_camera(pos);
        const double z = p_cam.z(), iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;

        // Opacity logit.
        const double o = s.opacity;
        out.grads.opacity_logits[i] += g_opacity[si] * o * (1.0 - o);

        // Color features; degree 1 routes a term into the position through
        // the view direction.
        const Vec3& gc = g_color[si];
        for (int ch = 0; ch < 3; ++ch) out.grads.features[i * fdim + ch] += kSh0 * gc[ch];
        Vec3 g_pos_dir = Vec3::Zero();
        if (fdim >= kFeatureDimDeg1) {
            const Vec3 u = pos - cam_center;
            const double un = u.norm();
            const Vec3 dir = u / un;
            const double b0 = -kSh1 * dir.y();
            const double b1 = kSh1 * dir.z();
            const double b2 = -kSh1 * dir.x();
            Vec3 g_dir = Vec3::Zero();
            for (int ch = 0; ch < 3; ++ch) {
                const double* f = cloud.features.data() + i * fdim;
                out.grads.features[i * fdim + 3 + 3 * ch] += b0 * gc[ch];
                out.grads.features[i * fdim + 4 + 3 * ch] += b1 * gc[ch];
                out.grads.features[i * fdim + 5 + 3 * ch] += b2 * gc[ch];
                g_dir += gc[ch] * (f[3 + 3 * ch] * Vec3(0, -kSh1, 0) +
                                   f[4 + 3 * ch] * Vec3(0, 0, kSh1) +
                                   f[5 + 3 * ch] * Vec3(-kSh1, 0, 0));
            }
            g_pos_dir = (Mat3::Identity() - dir * dir.transpose()) * g_dir / un;
        }

        // Screen-space mean: pixel gradient in normalized device units for
        // densification decisions.
        const Vec2& gm = g_mean[si];
        out.screen_grad_norm[i] +=
            Vec2(gm.x() * cam.width * 0.5, gm.y() * cam.height * 0.5).norm();

        // Mean path: mean2d = (fx X/Z + cx, fy Y/Z + cy).
        Vec3 g_pcam(gm.x() * cam.fx * iz, gm.y() * cam.fy * iz,
                    -gm.x() * cam.fx * p_cam.x() * iz2 - gm.y() * cam.fy * p_cam.y() * iz2);

        // Covariance path: cov2d = A Sigma A^T, A = J W.
        const Mat2 gcov = g_cov[si];
        const Mat23 j = projection_jacobian(cam, p_cam);
        const Mat23 a = j * cam.rotation;
        const Mat3 sigma = covariance_from_params(cloud.rotation(i), cloud.log_scale(i));
        const Mat3 g_sigma = a.transpose() * gcov * a;
        const Mat23 g_a = 2.0 * gcov * a * sigma;
        const Mat23 g_j = g_a * cam.rotation.transpose();

        // J's dependence on the camera-space point.
        g_pcam.x() += g_j(0, 2) * (-cam.fx * iz2);
        g_pcam.y() += g_j(1, 2) * (-cam.fy * iz2);
        g_pcam.z() += g_j(0, 0) * (-cam.fx * iz2) + g_j(1, 1) * (-cam.fy * iz2) +
                      g_j(0, 2) * (2.0 * cam.fx * p_cam.x() * iz3) +
                      g_j(1, 2) * (2.0 * cam.fy * p_cam.y() * iz3);

        const Vec3 g_pos = cam.rotation.transpose() * g_pcam + g_pos_dir;
        for (int k = 0; k < 3; ++k) out.grads.positions[3 * i + k] += g_pos[k];

        // Sigma = M M^T with M = R S; S = diag(exp(log_scale)).
        const Vec4 q_raw = cloud.rotation(i);
        const Vec4 q_hat = quat_normalized(q_raw);
        const Mat3 r = quat_to_rotation(q_hat);
        const Vec3 sc = cloud.log_scale(i).array().exp();
        const Mat3 m = r * sc.asDiagonal();
        const Mat3 g_m = 2.0 * g_sigma * m;
        const Mat3 g_r = g_m * sc.asDiagonal();
        const Mat3 rt_gm = r.transpose() * g_m;
        for (int k = 0; k < 3; ++k)
            out.grads.log_scales[3 * i + k] += rt_gm(k, k) * sc[k];

        Mat3 dr[4];
        rotation_quat_jacobian(q_hat, dr);
        Vec4 g_qhat;
        for (int k = 0; k < 4; ++k) g_qhat[k] = (g_r.array() * dr[k].array()).sum();
        // Through the normalization q_hat = q / |q|.
        const double qn = q_raw.norm();
        const Vec4 g_q = (g_qhat - q_hat * q_hat.dot(g_qhat)) / qn;
        for (int k = 0; k < 4; ++k) out.grads.rotations[4 * i + k] += g_q[k];
    }

    return out;
}

} // namespace blocksplat
