#include "blocksplat/wire.hpp"

#include <cstring>
#include <limits>

namespace blocksplat {

void encode_header(serial::Writer& w, const WireHeader& h) {
    w.bytes(kWireMagic, 4);
    w.u16(h.version);
    w.u8(static_cast<uint8_t>(h.type));
    w.u16(h.block_id);
    w.u64(h.iteration);
    w.u64(h.payload_length);
}

WireHeader decode_header(const uint8_t* data, size_t size) {
    if (size < kWireHeaderSize) throw FormatError(FormatErrorCode::BadHeader, "short frame header");
    if (std::memcmp(data, kWireMagic, 4) != 0)
        throw FormatError(FormatErrorCode::BadMagic, "bad frame magic");
    serial::Reader r(data + 4, size - 4, FormatErrorCode::BadHeader);
    WireHeader h;
    h.version = r.u16();
    const uint8_t t = r.u8();
    if (t < static_cast<uint8_t>(MessageType::Register) || t > static_cast<uint8_t>(MessageType::Ack))
        throw FormatError(FormatErrorCode::BadHeader, "unknown message type");
    h.type = static_cast<MessageType>(t);
    h.block_id = r.u16();
    h.iteration = r.u64();
    h.payload_length = r.u64();
    return h;
}

std::vector<uint8_t> encode_frame(const WireMessage& msg) {
    serial::Writer w;
    WireHeader h = msg.header;
    h.payload_length = msg.payload.size();
    encode_header(w, h);
    w.bytes(msg.payload.data(), msg.payload.size());
    return w.take();
}

void write_bundle(serial::Writer& w, const GaussianCloud& bundle) {
    const size_t n = bundle.size();
    const int fd = bundle.feature_dim();
    w.u64(n);
    w.u32(static_cast<uint32_t>(fd));
    for (size_t i = 0; i < n; ++i) w.u64(bundle.ids[i]);
    for (double v : bundle.positions) w.f64(v);
    for (double v : bundle.rotations) w.f64(v);
    for (double v : bundle.log_scales) w.f64(v);
    for (double v : bundle.features) w.f64(v);
    for (double v : bundle.opacity_logits) w.f64(v);
}

GaussianCloud read_bundle(serial::Reader& r) {
    const uint64_t n = r.u64();
    const uint32_t fd = r.u32();
    if (fd < kFeatureDimDeg0 || fd % 3 != 0)
        throw FormatError(FormatErrorCode::BadHeader, "bad feature dimension");
    const uint64_t per_row = 8ull + 8ull * (3 + 4 + 3 + fd + 1);
    if (n > 0 && (per_row > std::numeric_limits<uint64_t>::max() / n || n * per_row > r.remaining()))
        throw FormatError(FormatErrorCode::CountOverflow, "row count exceeds payload");
    GaussianCloud c(static_cast<int>(fd));
    c.resize(static_cast<size_t>(n));
    for (size_t i = 0; i < n; ++i) {
        c.ids[i] = r.u64();
        if (i > 0 && c.ids[i] <= c.ids[i - 1])
            throw FormatError(FormatErrorCode::NonMonotoneIds, "ids not strictly ascending");
    }
    for (double& v : c.positions) v = r.f64();
    for (double& v : c.rotations) v = r.f64();
    for (double& v : c.log_scales) v = r.f64();
    for (double& v : c.features) v = r.f64();
    for (double& v : c.opacity_logits) v = r.f64();
    return c;
}

std::vector<uint8_t> encode_bundle(const GaussianCloud& bundle) {
    serial::Writer w;
    write_bundle(w, bundle);
    return w.take();
}

GaussianCloud decode_bundle(const uint8_t* data, size_t size) {
    serial::Reader r(data, size);
    GaussianCloud c = read_bundle(r);
    if (!r.at_end()) throw FormatError(FormatErrorCode::TruncatedSection, "trailing bytes after bundle");
    return c;
}

GaussianCloud decode_bundle(const std::vector<uint8_t>& buf) {
    return decode_bundle(buf.data(), buf.size());
}

void write_id_list(serial::Writer& w, const std::vector<uint64_t>& ids) {
    w.u64(ids.size());
    for (uint64_t id : ids) w.u64(id);
}

std::vector<uint64_t> read_id_list(serial::Reader& r) {
    const uint64_t n = r.u64();
    if (n * 8ull > r.remaining())
        throw FormatError(FormatErrorCode::CountOverflow, "id count exceeds payload");
    std::vector<uint64_t> ids(static_cast<size_t>(n));
    for (auto& id : ids) id = r.u64();
    return ids;
}

std::vector<uint8_t> encode_local_update(const LocalUpdatePayload& p) {
    serial::Writer w;
    write_bundle(w, p.shared);
    write_id_list(w, p.removed_ids);
    w.u8(p.has_nonshared ? 1 : 0);
    if (p.has_nonshared) write_bundle(w, p.nonshared);
    return w.take();
}

LocalUpdatePayload decode_local_update(const std::vector<uint8_t>& buf) {
    serial::Reader r(buf);
    LocalUpdatePayload p;
    p.shared = read_bundle(r);
    p.removed_ids = read_id_list(r);
    const uint8_t flag = r.u8();
    if (flag > 1) throw FormatError(FormatErrorCode::BadHeader, "bad refresh flag");
    p.has_nonshared = flag == 1;
    if (p.has_nonshared) p.nonshared = read_bundle(r);
    if (!r.at_end()) throw FormatError(FormatErrorCode::TruncatedSection, "trailing bytes after update");
    return p;
}

std::vector<uint8_t> encode_broadcast(const BroadcastPayload& p) {
    serial::Writer w;
    write_bundle(w, p.consensus);
    write_id_list(w, p.reset_ids);
    write_id_list(w, p.unshared_ids);
    w.f64(p.rho.rho_p);
    w.f64(p.rho.rho_q);
    w.f64(p.rho.rho_s);
    w.f64(p.rho.rho_f);
    w.f64(p.rho.rho_o);
    return w.take();
}

BroadcastPayload decode_broadcast(const std::vector<uint8_t>& buf) {
    serial::Reader r(buf);
    BroadcastPayload p;
    p.consensus = read_bundle(r);
    p.reset_ids = read_id_list(r);
    p.unshared_ids = read_id_list(r);
    p.rho.rho_p = r.f64();
    p.rho.rho_q = r.f64();
    p.rho.rho_s = r.f64();
    p.rho.rho_f = r.f64();
    p.rho.rho_o = r.f64();
    if (!r.at_end()) throw FormatError(FormatErrorCode::TruncatedSection, "trailing bytes after broadcast");
    return p;
}

} // namespace blocksplat
