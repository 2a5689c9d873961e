#include "blocksplat/ssim.hpp"

#include <cmath>
#include <vector>

#include "blocksplat/errors.hpp"

namespace blocksplat {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr int kHalf = kSsimWindow / 2;

// One channel as a dense plane.
struct Plane {
    uint32_t w = 0, h = 0;
    std::vector<double> v;
    Plane() = default;
    Plane(uint32_t w_, uint32_t h_) : w(w_), h(h_), v(static_cast<size_t>(w_) * h_, 0.0) {}
    double& at(uint32_t x, uint32_t y) { return v[static_cast<size_t>(y) * w + x]; }
    double at(uint32_t x, uint32_t y) const { return v[static_cast<size_t>(y) * w + x]; }
};

Plane channel_plane(const Image& img, int c) {
    Plane p(img.width, img.height);
    for (uint32_t y = 0; y < img.height; ++y)
        for (uint32_t x = 0; x < img.width; ++x) p.at(x, y) = img.at(x, y, c);
    return p;
}

// Separable valid-mode correlation with the window: output (w-10) x (h-10).
Plane blur_valid(const Plane& in, const std::array<double, kSsimWindow>& k) {
    Plane horiz(in.w - 2 * kHalf, in.h);
    for (uint32_t y = 0; y < in.h; ++y)
        for (uint32_t x = 0; x < horiz.w; ++x) {
            double s = 0;
            for (int t = 0; t < kSsimWindow; ++t) s += k[t] * in.at(x + t, y);
            horiz.at(x, y) = s;
        }
    Plane out(horiz.w, in.h - 2 * kHalf);
    for (uint32_t y = 0; y < out.h; ++y)
        for (uint32_t x = 0; x < out.w; ++x) {
            double s = 0;
            for (int t = 0; t < kSsimWindow; ++t) s += k[t] * horiz.at(x, y + t);
            out.at(x, y) = s;
        }
    return out;
}

// Adjoint of blur_valid: scatters a valid-size field back to full size.
// With a symmetric kernel this is full-mode correlation with zero padding.
Plane spread_full(const Plane& in, const std::array<double, kSsimWindow>& k,
                  uint32_t full_w, uint32_t full_h) {
    Plane vert(in.w, full_h);
    for (uint32_t y = 0; y < in.h; ++y)
        for (uint32_t x = 0; x < in.w; ++x) {
            const double v = in.at(x, y);
            for (int t = 0; t < kSsimWindow; ++t) vert.at(x, y + t) += k[t] * v;
        }
    Plane out(full_w, full_h);
    for (uint32_t y = 0; y < full_h; ++y)
        for (uint32_t x = 0; x < in.w; ++x) {
            const double v = vert.at(x, y);
            for (int t = 0; t < kSsimWindow; ++t) out.at(x + t, y) += k[t] * v;
        }
    return out;
}

struct ChannelStats {
    Plane mu_x, mu_y, sigma_x2, sigma_y2, sigma_xy, ssim_map;
};

ChannelStats channel_ssim(const Plane& x, const Plane& y,
                          const std::array<double, kSsimWindow>& k) {
    ChannelStats s;
    s.mu_x = blur_valid(x, k);
    s.mu_y = blur_valid(y, k);
    Plane x2(x.w, x.h), y2(x.w, x.h), xy(x.w, x.h);
    for (size_t i = 0; i < x.v.size(); ++i) {
        x2.v[i] = x.v[i] * x.v[i];
        y2.v[i] = y.v[i] * y.v[i];
        xy.v[i] = x.v[i] * y.v[i];
    }
    s.sigma_x2 = blur_valid(x2, k);
    s.sigma_y2 = blur_valid(y2, k);
    s.sigma_xy = blur_valid(xy, k);
    s.ssim_map = Plane(s.mu_x.w, s.mu_x.h);
    for (size_t i = 0; i < s.ssim_map.v.size(); ++i) {
        const double mx = s.mu_x.v[i], my = s.mu_y.v[i];
        const double vx = s.sigma_x2.v[i] - mx * mx;
        const double vy = s.sigma_y2.v[i] - my * my;
        const double cxy = s.sigma_xy.v[i] - mx * my;
        s.sigma_x2.v[i] = vx;
        s.sigma_y2.v[i] = vy;
        s.sigma_xy.v[i] = cxy;
        const double n1 = 2 * mx * my + kC1, n2 = 2 * cxy + kC2;
        const double d1 = mx * mx + my * my + kC1, d2 = vx + vy + kC2;
        s.ssim_map.v[i] = (n1 * n2) / (d1 * d2);
    }
    return s;
}

void check_dims(const Image& x, const Image& y) {
    if (x.width != y.width || x.height != y.height)
        throw InvalidArgument("image dimension mismatch");
}

} // namespace

std::array<double, kSsimWindow> ssim_window_1d() {
    std::array<double, kSsimWindow> k{};
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kHalf;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

double ssim(const Image& x, const Image& y) {
    check_dims(x, y);
    if (x.width < kSsimWindow || x.height < kSsimWindow) return 1.0;
    const auto k = ssim_window_1d();
    double total = 0;
    size_t count = 0;
    for (int c = 0; c < 3; ++c) {
        const ChannelStats s = channel_ssim(channel_plane(x, c), channel_plane(y, c), k);
        for (double v : s.ssim_map.v) total += v;
        count += s.ssim_map.v.size();
    }
    return total / static_cast<double>(count);
}

double ssim_with_gradient(const Image& x, const Image& y, Image& dx) {
    check_dims(x, y);
    dx = Image(x.width, x.height, 0.0);
    if (x.width < kSsimWindow || x.height < kSsimWindow) return 1.0;
    const auto k = ssim_window_1d();
    double total = 0;
    size_t count = 0;
    for (int c = 0; c < 3; ++c) {
        const Plane px = channel_plane(x, c);
        const Plane py = channel_plane(y, c);
        const ChannelStats s = channel_ssim(px, py, k);
        const size_t n = s.ssim_map.v.size();
        for (double v : s.ssim_map.v) total += v;
        count += n;

        // Per-window partials of the SSIM value: A wrt mu_x, B wrt sigma_x^2,
        // C wrt sigma_xy. The pixel gradient folds them back through the
        // window weights:
        //   d ssim / d x(p) = G*(A - 2 mu_x B - mu_y C) + 2 x(p) G*B + y(p) G*C
        Plane f1(s.ssim_map.w, s.ssim_map.h), f2(s.ssim_map.w, s.ssim_map.h),
              f3(s.ssim_map.w, s.ssim_map.h);
        for (size_t i = 0; i < n; ++i) {
            const double mx = s.mu_x.v[i], my = s.mu_y.v[i];
            const double vx = s.sigma_x2.v[i], vy = s.sigma_y2.v[i], cxy = s.sigma_xy.v[i];
            const double n1 = 2 * mx * my + kC1, n2 = 2 * cxy + kC2;
            const double d1 = mx * mx + my * my + kC1, d2 = vx + vy + kC2;
            const double denom = d1 * d2;
            const double sv = (n1 * n2) / denom;
            const double a = 2 * my * n2 / denom - sv * 2 * mx / d1;
            const double b = -sv / d2;
            const double cc = 2 * n1 / denom;
            f1.v[i] = a - 2 * mx * b - my * cc;
            f2.v[i] = 2 * b;
            f3.v[i] = cc;
        }
        const Plane g1 = spread_full(f1, k, x.width, x.height);
        const Plane g2 = spread_full(f2, k, x.width, x.height);
        const Plane g3 = spread_full(f3, k, x.width, x.height);
        for (uint32_t yy = 0; yy < x.height; ++yy)
            for (uint32_t xx = 0; xx < x.width; ++xx)
                dx.at(xx, yy, c) = g1.at(xx, yy) + px.at(xx, yy) * g2.at(xx, yy) +
                                   py.at(xx, yy) * g3.at(xx, yy);
    }
    // The mean over windows and channels divides every pixel gradient too.
    const double inv = 1.0 / static_cast<double>(count);
    for (double& v : dx.data) v *= inv;
    return total * inv;
}

} // namespace blocksplat
