#include "blocksplat/scene.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "blocksplat/errors.hpp"
#include "blocksplat/serial.hpp"

namespace blocksplat {

namespace {

constexpr char kMagic[4] = {'D', 'O', 'G', 'S'};

void write_section(serial::Writer& out, const char tag[4], const std::vector<uint8_t>& payload) {
    out.bytes(reinterpret_cast<const uint8_t*>(tag), 4);
    out.u64(payload.size());
    out.bytes(payload.data(), payload.size());
}

std::vector<uint8_t> encode_cams(const std::vector<CameraView>& views) {
    serial::Writer w;
    w.u64(views.size());
    for (const CameraView& v : views) {
        w.u64(v.view_id);
        w.f64(v.fx); w.f64(v.fy); w.f64(v.cx); w.f64(v.cy);
        w.u32(v.width); w.u32(v.height);
        for (int k = 0; k < 4; ++k) w.f64(v.rotation_q[k]);
        for (int k = 0; k < 3; ++k) w.f64(v.translation[k]);
        w.u32(static_cast<uint32_t>(v.image_path.size()));
        w.bytes(reinterpret_cast<const uint8_t*>(v.image_path.data()), v.image_path.size());
    }
    return w.take();
}

std::vector<uint8_t> encode_pnts(const std::vector<ScenePoint>& points) {
    serial::Writer w;
    w.u64(points.size());
    for (const ScenePoint& p : points) {
        for (int k = 0; k < 3; ++k) w.f32(p.position[k]);
        for (int k = 0; k < 3; ++k) w.u8(p.rgb[k]);
    }
    return w.take();
}

std::vector<uint8_t> encode_gspl(const GaussianCloud& c) {
    serial::Writer w;
    w.u64(c.size());
    w.u32(static_cast<uint32_t>(c.feature_dim()));
    for (uint64_t id : c.ids) w.u64(id);
    for (double v : c.positions) w.f32(static_cast<float>(v));
    for (double v : c.rotations) w.f32(static_cast<float>(v));
    for (double v : c.log_scales) w.f32(static_cast<float>(v));
    for (double v : c.features) w.f32(static_cast<float>(v));
    for (double v : c.opacity_logits) w.f32(static_cast<float>(v));
    return w.take();
}

// Guards count * stride before any allocation.
size_t checked_count(serial::Reader& r, uint64_t count, uint64_t bytes_per_item) {
    if (count > r.remaining() / bytes_per_item)
        throw FormatError(FormatErrorCode::CountOverflow, "section count exceeds payload");
    return static_cast<size_t>(count);
}

std::vector<CameraView> decode_cams(serial::Reader& r) {
    // 77 bytes fixed per view plus the path.
    const size_t n = checked_count(r, r.u64(), 77);
    std::vector<CameraView> views(n);
    for (CameraView& v : views) {
        v.view_id = r.u64();
        v.fx = r.f64(); v.fy = r.f64(); v.cx = r.f64(); v.cy = r.f64();
        v.width = r.u32(); v.height = r.u32();
        Vec4 q;
        for (int k = 0; k < 4; ++k) q[k] = r.f64();
        v.set_rotation_quat(q);
        for (int k = 0; k < 3; ++k) v.translation[k] = r.f64();
        const uint32_t len = r.u32();
        v.image_path.resize(len);
        r.bytes(reinterpret_cast<uint8_t*>(v.image_path.data()), len);
    }
    return views;
}

std::vector<ScenePoint> decode_pnts(serial::Reader& r) {
    const size_t n = checked_count(r, r.u64(), 15);
    std::vector<ScenePoint> points(n);
    for (ScenePoint& p : points) {
        for (int k = 0; k < 3; ++k) p.position[k] = r.f32();
        for (int k = 0; k < 3; ++k) p.rgb[k] = r.u8();
    }
    return points;
}

GaussianCloud decode_gspl(serial::Reader& r) {
    const uint64_t count = r.u64();
    const uint32_t feature_dim = r.u32();
    if (feature_dim != kFeatureDimDeg0 && feature_dim != kFeatureDimDeg1)
        throw FormatError(FormatErrorCode::BadHeader, "unsupported feature width");
    const size_t n = checked_count(r, count, 8 + 4 * (11 + static_cast<uint64_t>(feature_dim)));
    GaussianCloud c(static_cast<int>(feature_dim));
    c.ids.resize(n);
    c.positions.resize(3 * n);
    c.rotations.resize(4 * n);
    c.log_scales.resize(3 * n);
    c.features.resize(n * feature_dim);
    c.opacity_logits.resize(n);
    for (size_t i = 0; i < n; ++i) c.ids[i] = r.u64();
    for (double& v : c.positions) v = r.f32();
    for (double& v : c.rotations) v = r.f32();
    for (double& v : c.log_scales) v = r.f32();
    for (double& v : c.features) v = r.f32();
    for (double& v : c.opacity_logits) v = r.f32();
    for (size_t i = 1; i < n; ++i)
        if (c.ids[i] <= c.ids[i - 1])
            throw FormatError(FormatErrorCode::NonMonotoneIds, "checkpoint ids not ascending");
    return c;
}

} // namespace

std::vector<uint8_t> encode_scene(const SceneDataset& scene) {
    serial::Writer out;
    out.bytes(reinterpret_cast<const uint8_t*>(kMagic), 4);
    out.u32(kSceneFormatVersion);
    write_section(out, "CAMS", encode_cams(scene.views));
    write_section(out, "PNTS", encode_pnts(scene.points));
    if (scene.has_checkpoint) write_section(out, "GSPL", encode_gspl(scene.checkpoint));
    return out.take();
}

SceneDataset decode_scene(const uint8_t* data, size_t size) {
    serial::Reader top(data, size, FormatErrorCode::TruncatedBuffer);
    char magic[4];
    top.bytes(reinterpret_cast<uint8_t*>(magic), 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(FormatErrorCode::BadMagic, "not a scene container");
    const uint32_t version = top.u32();
    if (version != kSceneFormatVersion)
        throw FormatError(FormatErrorCode::UnsupportedVersion,
                          "scene container version " + std::to_string(version));
    SceneDataset scene;
    bool seen_cams = false, seen_pnts = false, seen_gspl = false;
    while (!top.at_end()) {
        char tag[4];
        top.bytes(reinterpret_cast<uint8_t*>(tag), 4);
        const uint64_t len = top.u64();
        if (len > top.remaining())
            throw FormatError(FormatErrorCode::TruncatedSection, "section payload truncated");
        serial::Reader sec(data + top.position(), static_cast<size_t>(len),
                           FormatErrorCode::TruncatedSection);
        top.skip(static_cast<size_t>(len));
        if (std::memcmp(tag, "CAMS", 4) == 0) {
            if (seen_cams) throw FormatError(FormatErrorCode::BadHeader, "duplicate CAMS section");
            seen_cams = true;
            scene.views = decode_cams(sec);
        } else if (std::memcmp(tag, "PNTS", 4) == 0) {
            if (seen_pnts) throw FormatError(FormatErrorCode::BadHeader, "duplicate PNTS section");
            seen_pnts = true;
            scene.points = decode_pnts(sec);
        } else if (std::memcmp(tag, "GSPL", 4) == 0) {
            if (seen_gspl) throw FormatError(FormatErrorCode::BadHeader, "duplicate GSPL section");
            seen_gspl = true;
            scene.checkpoint = decode_gspl(sec);
            scene.has_checkpoint = true;
        } else {
            throw FormatError(FormatErrorCode::UnknownSection,
                              "unknown section tag " + std::string(tag, 4));
        }
        if (!sec.at_end())
            throw FormatError(FormatErrorCode::TruncatedSection, "section has trailing bytes");
    }
    return scene;
}

void save_scene(const std::string& path, const SceneDataset& scene) {
    const std::vector<uint8_t> bytes = encode_scene(scene);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

SceneDataset load_scene(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw std::runtime_error("read failed: " + path);
    return decode_scene(bytes.data(), bytes.size());
}

std::string save_scene_bundle(const std::string& dir, const LoadedScene& scene) {
    if (scene.images.size() != scene.dataset.views.size())
        throw InvalidArgument("one image per view required");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "gt");
    SceneDataset dataset = scene.dataset;
    for (size_t i = 0; i < dataset.views.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "view_%05llu.ppm",
                      static_cast<unsigned long long>(dataset.views[i].view_id));
        const std::string rel = std::string("gt/") + name;
        dataset.views[i].image_path = rel;
        save_ppm((fs::path(dir) / rel).string(), scene.images[i]);
    }
    const std::string scene_path = (fs::path(dir) / "scene.dogs").string();
    save_scene(scene_path, dataset);
    return scene_path;
}

LoadedScene load_scene_bundle(const std::string& scene_path) {
    namespace fs = std::filesystem;
    LoadedScene out;
    out.dataset = load_scene(scene_path);
    const fs::path base = fs::path(scene_path).parent_path();
    out.images.reserve(out.dataset.views.size());
    for (const auto& view : out.dataset.views) {
        if (view.image_path.empty())
            throw std::runtime_error("view " + std::to_string(view.view_id) + " has no image path");
        out.images.push_back(load_ppm((base / view.image_path).string()));
    }
    return out;
}

GaussianCloud narrow_to_f32(const GaussianCloud& cloud) {
    GaussianCloud out = cloud;
    auto narrow = [](std::vector<double>& v) {
        for (double& x : v) x = static_cast<float>(x);
    };
    narrow(out.positions);
    narrow(out.rotations);
    narrow(out.log_scales);
    narrow(out.features);
    narrow(out.opacity_logits);
    return out;
}

} // namespace blocksplat
