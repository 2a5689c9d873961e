#pragma once

#include <cstdint>
#include <vector>

#include "blocksplat/admm.hpp"
#include "blocksplat/cloud.hpp"
#include "blocksplat/serial.hpp"

// Message framing between the coordinator and block workers. Every frame is
// a fixed 25-byte little-endian header followed by payload_length bytes.
// Parameter payloads carry doubles so a broadcast value survives the trip
// bit-for-bit; checkpoints on disk stay float and are not sent this way.

namespace blocksplat {

inline constexpr char kWireMagic[4] = {'D', 'G', 'S', 'W'};
inline constexpr uint16_t kWireVersion = 1;
inline constexpr size_t kWireHeaderSize = 25;

enum class MessageType : uint8_t {
    Register = 1,
    LocalUpdate = 2,
    GlobalBroadcast = 3,
    NewIds = 4,
    Metrics = 5,
    Shutdown = 6,
    Ack = 7,
};

struct WireHeader {
    uint16_t version = kWireVersion;
    MessageType type = MessageType::Ack;
    uint16_t block_id = 0;
    uint64_t iteration = 0;
    uint64_t payload_length = 0;
};

struct WireMessage {
    WireHeader header;
    std::vector<uint8_t> payload;

    WireMessage() = default;
    WireMessage(MessageType t, uint16_t block, uint64_t iter, std::vector<uint8_t> body = {})
        : payload(std::move(body)) {
        header.type = t;
        header.block_id = block;
        header.iteration = iter;
        header.payload_length = payload.size();
    }
};

void encode_header(serial::Writer& w, const WireHeader& h);

// Throws FormatError(BadMagic) on a wrong magic, FormatError(BadHeader) on a
// short buffer or an out-of-range message type. The version field is carried
// through; rejecting a mismatch is the session's call.
WireHeader decode_header(const uint8_t* data, size_t size);

std::vector<uint8_t> encode_frame(const WireMessage& msg);

// Parameter bundle codec. Layout after an 8-byte row count and a 4-byte
// feature dimension: one contiguous array per property in the order
// ids u64, positions 3, rotations 4, log_scales 3, features fd, opacity 1,
// every scalar an f64. IDs must be strictly ascending.
void write_bundle(serial::Writer& w, const GaussianCloud& bundle);
GaussianCloud read_bundle(serial::Reader& r);

std::vector<uint8_t> encode_bundle(const GaussianCloud& bundle);

// Whole-buffer decode; trailing bytes are an error (TruncatedSection).
GaussianCloud decode_bundle(const uint8_t* data, size_t size);
GaussianCloud decode_bundle(const std::vector<uint8_t>& buf);

void write_id_list(serial::Writer& w, const std::vector<uint64_t>& ids);
std::vector<uint64_t> read_id_list(serial::Reader& r);

// LOCAL_UPDATE: the block's shared-ID slice, the IDs it pruned since the
// previous round, and (on refresh rounds) its non-shared slice.
struct LocalUpdatePayload {
    GaussianCloud shared;
    std::vector<uint64_t> removed_ids;
    bool has_nonshared = false;
    GaussianCloud nonshared;
};

std::vector<uint8_t> encode_local_update(const LocalUpdatePayload& p);
LocalUpdatePayload decode_local_update(const std::vector<uint8_t>& buf);

// GLOBAL_BROADCAST: the consensus values for every currently shared ID,
// IDs whose duals must restart from zero, IDs that stopped being shared,
// and the penalty weights in force for the next window.
struct BroadcastPayload {
    GaussianCloud consensus;
    std::vector<uint64_t> reset_ids;
    std::vector<uint64_t> unshared_ids;
    PropertyPenalties rho;
};

std::vector<uint8_t> encode_broadcast(const BroadcastPayload& p);
BroadcastPayload decode_broadcast(const std::vector<uint8_t>& buf);

} // namespace blocksplat
