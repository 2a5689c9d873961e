#include "blocksplat/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace blocksplat {

namespace {

using Clock = std::chrono::steady_clock;

// Guards against absurd allocations when a stream is corrupt.
constexpr uint64_t kMaxPayload = 1ull << 32;

struct Mailbox {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<WireMessage> queue;
    bool closed = false;

    void push(const WireMessage& msg) {
        {
            std::lock_guard<std::mutex> lock(mutex);
            if (closed) throw std::runtime_error("channel closed");
            queue.push_back(msg);
        }
        cv.notify_one();
    }

    WireMessage pop(uint64_t timeout_ms) {
        std::unique_lock<std::mutex> lock(mutex);
        const bool ok = cv.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                                    [&] { return !queue.empty() || closed; });
        if (!ok) throw TimeoutError("recv timed out");
        if (queue.empty()) throw std::runtime_error("channel closed");
        WireMessage msg = std::move(queue.front());
        queue.pop_front();
        return msg;
    }

    void close() {
        {
            std::lock_guard<std::mutex> lock(mutex);
            closed = true;
        }
        cv.notify_all();
    }
};

class QueueChannel final : public Channel {
public:
    QueueChannel(std::shared_ptr<Mailbox> in, std::shared_ptr<Mailbox> out)
        : in_(std::move(in)), out_(std::move(out)) {}

    ~QueueChannel() override {
        in_->close();
        out_->close();
    }

    void send(const WireMessage& msg) override { out_->push(msg); }
    WireMessage recv(uint64_t timeout_ms) override { return in_->pop(timeout_ms); }

private:
    std::shared_ptr<Mailbox> in_;
    std::shared_ptr<Mailbox> out_;
};

[[noreturn]] void throw_errno(const std::string& what) {
    throw std::runtime_error(what + ": " + std::strerror(errno));
}

void write_all(int fd, const uint8_t* data, size_t n) {
    size_t sent = 0;
    while (sent < n) {
        const ssize_t r = ::send(fd, data + sent, n - sent, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw_errno("socket send failed");
        }
        sent += static_cast<size_t>(r);
    }
}

void read_all(int fd, uint8_t* out, size_t n, Clock::time_point deadline) {
    size_t got = 0;
    while (got < n) {
        const auto now = Clock::now();
        if (now >= deadline) throw TimeoutError("socket recv timed out");
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
        pollfd p{fd, POLLIN, 0};
        const int pr = ::poll(&p, 1, static_cast<int>(left.count()) + 1);
        if (pr < 0) {
            if (errno == EINTR) continue;
            throw_errno("poll failed");
        }
        if (pr == 0) throw TimeoutError("socket recv timed out");
        const ssize_t r = ::recv(fd, out + got, n - got, 0);
        if (r == 0) throw std::runtime_error("peer closed connection");
        if (r < 0) {
            if (errno == EINTR) continue;
            throw_errno("socket recv failed");
        }
        got += static_cast<size_t>(r);
    }
}

class SocketChannel final : public Channel {
public:
    explicit SocketChannel(int fd) : fd_(fd) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }

    ~SocketChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void send(const WireMessage& msg) override {
        const std::vector<uint8_t> frame = encode_frame(msg);
        write_all(fd_, frame.data(), frame.size());
    }

    WireMessage recv(uint64_t timeout_ms) override {
        const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
        uint8_t hdr[kWireHeaderSize];
        read_all(fd_, hdr, kWireHeaderSize, deadline);
        WireMessage msg;
        msg.header = decode_header(hdr, kWireHeaderSize);
        if (msg.header.payload_length > kMaxPayload)
            throw FormatError(FormatErrorCode::BadHeader, "payload length out of range");
        msg.payload.resize(static_cast<size_t>(msg.header.payload_length));
        if (!msg.payload.empty()) read_all(fd_, msg.payload.data(), msg.payload.size(), deadline);
        return msg;
    }

private:
    int fd_;
};

struct Resolved {
    sockaddr_storage addr{};
    socklen_t len = 0;
};

Resolved resolve_endpoint(const std::string& endpoint, bool passive) {
    const auto colon = endpoint.rfind(':');
    if (colon == std::string::npos) throw InvalidArgument("endpoint must be host:port");
    std::string host = endpoint.substr(0, colon);
    const std::string service = endpoint.substr(colon + 1);
    if (service.empty()) throw InvalidArgument("endpoint must be host:port");

    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    addrinfo* info = nullptr;
    const char* node = host.empty() || host == "*" ? nullptr : host.c_str();
    const int rc = ::getaddrinfo(node, service.c_str(), &hints, &info);
    if (rc != 0) throw std::runtime_error("cannot resolve " + endpoint + ": " + gai_strerror(rc));
    Resolved out;
    std::memcpy(&out.addr, info->ai_addr, info->ai_addrlen);
    out.len = static_cast<socklen_t>(info->ai_addrlen);
    ::freeaddrinfo(info);
    return out;
}

} // namespace

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_local_channel_pair() {
    auto a = std::make_shared<Mailbox>();
    auto b = std::make_shared<Mailbox>();
    return {std::make_unique<QueueChannel>(a, b), std::make_unique<QueueChannel>(b, a)};
}

std::unique_ptr<Channel> connect_channel(const std::string& endpoint, int retries) {
    const Resolved target = resolve_endpoint(endpoint, false);
    uint64_t delay_ms = 250;
    for (int attempt = 0;; ++attempt) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw_errno("socket failed");
        if (::connect(fd, reinterpret_cast<const sockaddr*>(&target.addr), target.len) == 0)
            return std::make_unique<SocketChannel>(fd);
        const int err = errno;
        ::close(fd);
        if (attempt >= retries)
            throw std::runtime_error("cannot connect to " + endpoint + ": " + std::strerror(err));
        std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        delay_ms *= 2;
    }
}

ChannelListener::ChannelListener(const std::string& endpoint) {
    const Resolved bind_to = resolve_endpoint(endpoint, true);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw_errno("socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&bind_to.addr), bind_to.len) != 0) {
        const int err = errno;
        ::close(fd_);
        fd_ = -1;
        throw std::runtime_error("cannot bind " + endpoint + ": " + std::strerror(err));
    }
    if (::listen(fd_, 16) != 0) {
        const int err = errno;
        ::close(fd_);
        fd_ = -1;
        throw std::runtime_error(std::string("listen failed: ") + std::strerror(err));
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len) == 0)
        port_ = ntohs(bound.sin_port);
}

ChannelListener::~ChannelListener() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Channel> ChannelListener::accept(uint64_t timeout_ms) {
    const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
        const auto now = Clock::now();
        if (now >= deadline) throw TimeoutError("accept timed out");
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
        pollfd p{fd_, POLLIN, 0};
        const int pr = ::poll(&p, 1, static_cast<int>(left.count()) + 1);
        if (pr < 0) {
            if (errno == EINTR) continue;
            throw_errno("poll failed");
        }
        if (pr == 0) throw TimeoutError("accept timed out");
        const int cfd = ::accept(fd_, nullptr, nullptr);
        if (cfd < 0) {
            if (errno == EINTR) continue;
            throw_errno("accept failed");
        }
        return std::make_unique<SocketChannel>(cfd);
    }
}

std::vector<uint64_t> consensus_schedule(uint64_t total_iterations, uint32_t interval) {
    if (total_iterations == 0) throw InvalidArgument("zero training iterations");
    if (interval == 0) throw InvalidArgument("zero consensus interval");
    std::vector<uint64_t> out;
    for (uint64_t t = interval; t < total_iterations; t += interval) out.push_back(t);
    out.push_back(total_iterations);
    return out;
}

ClusterPlan plan_cluster(const LoadedScene& scene, uint32_t blocks, double expand_scale,
                         uint32_t holdout_modulus, const TrainerConfig& trainer,
                         const SplitOptions& split) {
    const SceneDataset& ds = scene.dataset;
    if (ds.views.empty()) throw InvalidArgument("scene has no views");
    if (scene.images.size() != ds.views.size()) throw InvalidArgument("one image per view required");

    ClusterPlan plan;
    plan.init_cloud = ds.has_checkpoint
                          ? ds.checkpoint
                          : init_cloud_from_points(ds.points, trainer.sh_degree, trainer.init_opacity);
    if (!plan.init_cloud.check_invariants()) throw InvalidArgument("initial cloud ill-formed");

    std::vector<Vec3> positions(plan.init_cloud.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = plan.init_cloud.position(i);

    const std::vector<CoreBlock> cores = split_recursive(positions, blocks, split);
    plan.partition =
        expand_and_assign(cores, positions, ds.views, plan.init_cloud, expand_scale, split);

    for (uint32_t b = 0; b < blocks; ++b)
        for (uint64_t id : plan.partition.block_gaussians[b]) plan.owners[id].push_back(b);

    plan.shards.resize(blocks);
    for (uint32_t b = 0; b < blocks; ++b) {
        ShardSpec& shard = plan.shards[b];
        shard.block_id = b;
        shard.global_initial_count = plan.init_cloud.size();
        shard.initial = slice_by_ids(plan.init_cloud, plan.partition.block_gaussians[b]);
        for (const auto& [id, owner_list] : plan.partition.shared)
            if (std::binary_search(owner_list.begin(), owner_list.end(), b))
                shard.shared_ids.push_back(id);
        for (size_t view_index : plan.partition.block_views[b]) {
            if (holdout_modulus != 0 && view_index % holdout_modulus == 0) continue;
            shard.views.push_back(TrainView{ds.views[view_index], &scene.images[view_index]});
        }
        if (shard.views.empty())
            throw std::runtime_error("block " + std::to_string(b) + " has no training views");
    }
    return plan;
}

namespace {

struct PendingUpdate {
    double loss = 0;
    GaussianCloud new_rows;
    LocalUpdatePayload update;
};

PendingUpdate collect_update(Channel& ch, uint32_t block, uint64_t iteration, uint64_t timeout_ms) {
    PendingUpdate pending;
    for (;;) {
        WireMessage msg;
        try {
            msg = ch.recv(timeout_ms);
        } catch (const TimeoutError&) {
            throw TimeoutError("worker " + std::to_string(block) + " timed out at iteration " +
                               std::to_string(iteration));
        }
        if (msg.header.block_id != block)
            throw std::runtime_error("message from wrong block on channel " + std::to_string(block));
        if (msg.header.iteration != iteration)
            throw std::runtime_error("worker " + std::to_string(block) + " is at the wrong round");
        switch (msg.header.type) {
        case MessageType::Metrics: {
            serial::Reader r(msg.payload);
            pending.loss = r.f64();
            break;
        }
        case MessageType::NewIds:
            pending.new_rows = decode_bundle(msg.payload);
            break;
        case MessageType::LocalUpdate:
            pending.update = decode_local_update(msg.payload);
            return pending;
        default:
            throw std::runtime_error("unexpected message type from worker " + std::to_string(block));
        }
    }
}

WireMessage expect(Channel& ch, MessageType type, uint64_t iteration, uint32_t block,
                   uint64_t timeout_ms) {
    WireMessage msg;
    try {
        msg = ch.recv(timeout_ms);
    } catch (const TimeoutError&) {
        throw TimeoutError("worker " + std::to_string(block) + " timed out at iteration " +
                           std::to_string(iteration));
    }
    if (msg.header.type != type || msg.header.iteration != iteration)
        throw std::runtime_error("protocol violation from worker " + std::to_string(block));
    return msg;
}

} // namespace

void run_worker_session(Channel& channel, BlockTrainer& trainer, const SessionOptions& opt) {
    const auto block = static_cast<uint16_t>(trainer.block_id());
    const uint64_t timeout = opt.timeout_ms;

    channel.send(WireMessage(MessageType::Register, block, 0));
    const WireMessage reg_ack = channel.recv(timeout);
    if (reg_ack.header.type != MessageType::Ack)
        throw std::runtime_error("registration rejected");
    if (reg_ack.header.version != kWireVersion)
        throw FormatError(FormatErrorCode::UnsupportedVersion, "wire version mismatch");

    // Round 0 carries the initial consensus anchor and no parameters move.
    const WireMessage anchor_msg = channel.recv(timeout);
    if (anchor_msg.header.type != MessageType::GlobalBroadcast || anchor_msg.header.iteration != 0)
        throw std::runtime_error("expected the anchor broadcast");
    if (opt.consensus.enabled) {
        const BroadcastPayload anchor = decode_broadcast(anchor_msg.payload);
        trainer.set_anchor(anchor.consensus, anchor.rho);
    }
    channel.send(WireMessage(MessageType::Ack, block, 0, encode_bundle(trainer.duals())));

    const std::vector<uint64_t> schedule =
        consensus_schedule(opt.total_iterations, opt.consensus.interval);
    uint64_t done = 0;
    for (size_t j = 0; j < schedule.size(); ++j) {
        const uint64_t t = schedule[j];
        trainer.run_iterations(t - done);
        done = t;

        serial::Writer loss_body;
        loss_body.f64(trainer.last_loss());
        channel.send(WireMessage(MessageType::Metrics, block, t, loss_body.take()));

        const GaussianCloud new_rows = trainer.take_new_rows();
        if (!new_rows.empty())
            channel.send(WireMessage(MessageType::NewIds, block, t, encode_bundle(new_rows)));

        const bool final_round = t == opt.total_iterations;
        LocalUpdatePayload up;
        up.shared = trainer.shared_slice();
        up.removed_ids = trainer.take_removed_ids();
        up.has_nonshared =
            final_round || (opt.nonshared_refresh != 0 && (j + 1) % opt.nonshared_refresh == 0);
        if (up.has_nonshared) up.nonshared = trainer.nonshared_slice();
        channel.send(WireMessage(MessageType::LocalUpdate, block, t, encode_local_update(up)));

        const WireMessage bmsg = channel.recv(timeout);
        if (bmsg.header.type != MessageType::GlobalBroadcast || bmsg.header.iteration != t)
            throw std::runtime_error("round mismatch in broadcast");
        if (opt.consensus.enabled) {
            const BroadcastPayload bp = decode_broadcast(bmsg.payload);
            const bool relax = opt.consensus.alpha != 1.0 && !final_round;
            trainer.apply_broadcast(bp.consensus, bp.reset_ids, bp.unshared_ids, bp.rho,
                                    opt.consensus.alpha, relax);
        }
        channel.send(WireMessage(MessageType::Ack, block, t, encode_bundle(trainer.duals())));
    }

    const WireMessage shutdown = channel.recv(timeout);
    if (shutdown.header.type != MessageType::Shutdown)
        throw std::runtime_error("expected shutdown");
    channel.send(WireMessage(MessageType::Ack, block, shutdown.header.iteration));
}

RunResult run_master_session(std::vector<std::unique_ptr<Channel>> channels,
                             const GaussianCloud& init_cloud,
                             const std::map<uint64_t, std::vector<uint32_t>>& owners_in,
                             uint32_t blocks, const SessionOptions& opt,
                             const std::function<void(const RoundDiagnostics&)>& observer,
                             const std::vector<Aabb>* home_boxes) {
    const auto start = Clock::now();
    if (blocks == 0) throw InvalidArgument("no blocks");
    if (channels.size() != blocks) throw InvalidArgument("channel count differs from block count");

    std::vector<std::unique_ptr<Channel>> link(blocks);
    for (auto& ch : channels) {
        WireMessage msg;
        try {
            msg = ch->recv(opt.timeout_ms);
        } catch (const TimeoutError&) {
            throw TimeoutError("worker registration timed out");
        }
        if (msg.header.type != MessageType::Register)
            throw std::runtime_error("expected a registration");
        if (msg.header.version != kWireVersion)
            throw FormatError(FormatErrorCode::UnsupportedVersion, "wire version mismatch");
        const uint16_t b = msg.header.block_id;
        if (b >= blocks) throw std::runtime_error("registration for unknown block " + std::to_string(b));
        if (link[b]) throw std::runtime_error("duplicate registration for block " + std::to_string(b));
        link[b] = std::move(ch);
    }
    for (uint32_t b = 0; b < blocks; ++b) link[b]->send(WireMessage(MessageType::Ack, b, 0));

    auto owners = owners_in;
    GaussianCloud global = init_cloud;
    PropertyPenalties rho = opt.rho;

    auto current_shared = [&owners] {
        std::vector<uint64_t> out;
        for (const auto& [id, list] : owners)
            if (list.size() >= 2) out.push_back(id);
        return out;
    };

    std::vector<uint64_t> shared_now = current_shared();
    GaussianCloud z_prev = slice_by_ids(global, shared_now);

    {
        const BroadcastPayload anchor{z_prev, {}, {}, rho};
        const std::vector<uint8_t> body = encode_broadcast(anchor);
        for (uint32_t b = 0; b < blocks; ++b)
            link[b]->send(WireMessage(MessageType::GlobalBroadcast, b, 0, body));
        for (uint32_t b = 0; b < blocks; ++b)
            expect(*link[b], MessageType::Ack, 0, b, opt.timeout_ms);
    }

    RunResult result;
    const std::vector<uint64_t> schedule =
        consensus_schedule(opt.total_iterations, opt.consensus.interval);
    for (size_t j = 0; j < schedule.size(); ++j) {
        const uint64_t t = schedule[j];
        const bool final_round = t == opt.total_iterations;

        std::vector<PendingUpdate> ups(blocks);
        for (uint32_t b = 0; b < blocks; ++b)
            ups[b] = collect_update(*link[b], b, t, opt.timeout_ms);

        // Ownership changes from pruning, before anything is averaged.
        std::map<uint64_t, size_t> prev_owner_count;
        for (uint32_t b = 0; b < blocks; ++b) {
            for (uint64_t id : ups[b].update.removed_ids) {
                auto it = owners.find(id);
                if (it == owners.end()) continue;
                prev_owner_count.emplace(id, it->second.size());
                auto& list = it->second;
                list.erase(std::remove(list.begin(), list.end(), b), list.end());
            }
        }
        std::vector<uint64_t> reset_ids, unshared_ids, dead_ids;
        for (const auto& [id, prev] : prev_owner_count) {
            const auto& list = owners.at(id);
            if (list.empty())
                dead_ids.push_back(id);
            else if (prev >= 2 && list.size() == 1)
                unshared_ids.push_back(id);
            else if (prev >= 2)
                reset_ids.push_back(id);
        }
        erase_by_ids(global, dead_ids);
        for (uint64_t id : dead_ids) owners.erase(id);

        for (uint32_t b = 0; b < blocks; ++b) {
            if (ups[b].new_rows.empty()) continue;
            insert_rows(global, ups[b].new_rows);
            for (uint64_t id : ups[b].new_rows.ids) owners[id] = {b};
        }

        shared_now = current_shared();
        std::vector<GaussianCloud> slices(blocks);
        std::vector<BlockContribution> contribs;
        contribs.reserve(blocks);
        for (uint32_t b = 0; b < blocks; ++b) {
            slices[b] = slice_by_ids(ups[b].update.shared, shared_now);
            contribs.push_back(BlockContribution{b, &slices[b]});
        }

        std::vector<uint64_t> flipped;
        const bool relax = opt.consensus.enabled && opt.consensus.alpha != 1.0 && !final_round;
        const GaussianCloud z =
            consensus_average(contribs, relax, z_prev, opt.consensus.alpha, &flipped);
        reset_ids.insert(reset_ids.end(), flipped.begin(), flipped.end());
        std::sort(reset_ids.begin(), reset_ids.end());
        reset_ids.erase(std::unique(reset_ids.begin(), reset_ids.end()), reset_ids.end());

        const ResidualNorms norms = residuals(contribs, z, z_prev, rho);
        if (opt.consensus.enabled)
            rho = adapt_penalties(rho, norms.primal, norms.dual, opt.consensus, t);

        RoundDiagnostics diag;
        diag.iteration = t;
        diag.primal_residual = norms.primal;
        diag.dual_residual = norms.dual;
        diag.rho = rho;
        diag.max_disagreement = max_disagreement(contribs);
        for (uint32_t b = 0; b < blocks; ++b) diag.mean_loss += ups[b].loss;
        diag.mean_loss /= blocks;

        // The broadcast keeps the raw averaged quaternion (the dual algebra
        // needs the exact mean); the assembled model is the place to restore
        // unit length.
        GaussianCloud z_model = z;
        for (size_t i = 0; i < z_model.size(); ++i)
            z_model.set_rotation(i, quat_normalized(z_model.rotation(i)));
        overwrite_by_ids(global, z_model);
        // An ID that just went single-owner is absent from z; its last
        // uploaded value comes from the surviving owner's shared slice.
        for (uint64_t id : unshared_ids) {
            const uint32_t owner = owners.at(id).front();
            overwrite_by_ids(global, slice_by_ids(ups[owner].update.shared, {id}));
        }
        for (uint32_t b = 0; b < blocks; ++b)
            if (ups[b].update.has_nonshared) overwrite_by_ids(global, ups[b].update.nonshared);
        z_prev = z;

        const BroadcastPayload bp{z, reset_ids, unshared_ids, rho};
        const std::vector<uint8_t> body = encode_broadcast(bp);
        for (uint32_t b = 0; b < blocks; ++b)
            link[b]->send(WireMessage(MessageType::GlobalBroadcast, b, t, body));

        // Dual snapshots ride on the acknowledgements; their per-ID mean over
        // owners is the consensus health signal.
        GaussianCloud accum = zero_bundle(shared_now, global.feature_dim());
        std::vector<uint32_t> counts(shared_now.size(), 0);
        for (uint32_t b = 0; b < blocks; ++b) {
            const WireMessage ack = expect(*link[b], MessageType::Ack, t, b, opt.timeout_ms);
            if (ack.payload.empty()) continue;
            const GaussianCloud duals = decode_bundle(ack.payload);
            const int fd = accum.feature_dim();
            for (size_t i = 0; i < duals.size(); ++i) {
                const size_t row = accum.find(duals.ids[i]);
                if (row == GaussianCloud::npos) continue;
                for (int k = 0; k < 3; ++k) accum.positions[3 * row + k] += duals.positions[3 * i + k];
                for (int k = 0; k < 4; ++k) accum.rotations[4 * row + k] += duals.rotations[4 * i + k];
                for (int k = 0; k < 3; ++k)
                    accum.log_scales[3 * row + k] += duals.log_scales[3 * i + k];
                for (int k = 0; k < fd; ++k)
                    accum.features[row * fd + k] += duals.features[i * fd + k];
                accum.opacity_logits[row] += duals.opacity_logits[i];
                ++counts[row];
            }
        }
        double linf = 0;
        const int fd = accum.feature_dim();
        for (size_t row = 0; row < accum.size(); ++row) {
            if (counts[row] == 0) continue;
            const double inv = 1.0 / counts[row];
            auto upd = [&linf, inv](double v) { linf = std::max(linf, std::abs(v * inv)); };
            for (int k = 0; k < 3; ++k) upd(accum.positions[3 * row + k]);
            for (int k = 0; k < 4; ++k) upd(accum.rotations[4 * row + k]);
            for (int k = 0; k < 3; ++k) upd(accum.log_scales[3 * row + k]);
            for (int k = 0; k < fd; ++k) upd(accum.features[row * fd + k]);
            upd(accum.opacity_logits[row]);
        }
        diag.dual_mean_linf = linf;
        diag.shared_count = shared_now.size();
        diag.global_count = global.size();
        result.rounds.push_back(diag);
        if (observer) observer(diag);
    }

    for (uint32_t b = 0; b < blocks; ++b)
        link[b]->send(WireMessage(MessageType::Shutdown, b, opt.total_iterations));
    for (uint32_t b = 0; b < blocks; ++b)
        expect(*link[b], MessageType::Ack, opt.total_iterations, b, opt.timeout_ms);

    result.model = global;
    result.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return result;
}

RunResult run_simulated(const ClusterPlan& plan, const TrainerConfig& trainer,
                        const SessionOptions& opt,
                        const std::function<void(const RoundDiagnostics&)>& observer) {
    if (opt.total_iterations != trainer.iterations)
        throw InvalidArgument("session and trainer iteration counts differ");
    const auto blocks = static_cast<uint32_t>(plan.shards.size());
    if (blocks == 0) throw InvalidArgument("plan has no shards");

    std::vector<std::unique_ptr<Channel>> master_ends;
    std::vector<std::unique_ptr<Channel>> worker_ends(blocks);
    master_ends.reserve(blocks);
    for (uint32_t b = 0; b < blocks; ++b) {
        auto [m, w] = make_local_channel_pair();
        master_ends.push_back(std::move(m));
        worker_ends[b] = std::move(w);
    }

    std::vector<std::exception_ptr> worker_errors(blocks);
    std::vector<std::thread> threads;
    threads.reserve(blocks);
    for (uint32_t b = 0; b < blocks; ++b) {
        threads.emplace_back([&, b] {
            try {
                const ShardSpec& shard = plan.shards[b];
                BlockTrainer block_trainer(shard.block_id, shard.initial, shard.views,
                                           shard.shared_ids, shard.global_initial_count, trainer);
                run_worker_session(*worker_ends[b], block_trainer, opt);
            } catch (...) {
                worker_errors[b] = std::current_exception();
            }
            // Unblocks the master if it is still waiting on this worker.
            worker_ends[b].reset();
        });
    }

    RunResult result;
    std::exception_ptr master_error;
    try {
        result = run_master_session(std::move(master_ends), plan.init_cloud, plan.owners, blocks,
                                    opt, observer);
    } catch (...) {
        master_error = std::current_exception();
    }
    for (auto& th : threads) th.join();
    for (auto& err : worker_errors)
        if (err) std::rethrow_exception(err);
    if (master_error) std::rethrow_exception(master_error);
    return result;
}

RunResult run_socket_master(ChannelListener& listener, const ClusterPlan& plan,
                            const SessionOptions& opt,
                            const std::function<void(const RoundDiagnostics&)>& observer) {
    const auto blocks = static_cast<uint32_t>(plan.shards.size());
    std::vector<std::unique_ptr<Channel>> channels;
    channels.reserve(blocks);
    for (uint32_t i = 0; i < blocks; ++i) channels.push_back(listener.accept(opt.timeout_ms));
    return run_master_session(std::move(channels), plan.init_cloud, plan.owners, blocks, opt,
                              observer);
}

GaussianCloud run_socket_worker(const std::string& endpoint, const ClusterPlan& plan,
                                uint32_t block_id, const TrainerConfig& trainer,
                                const SessionOptions& opt) {
    if (block_id >= plan.shards.size()) throw InvalidArgument("block id out of range");
    if (opt.total_iterations != trainer.iterations)
        throw InvalidArgument("session and trainer iteration counts differ");
    const std::unique_ptr<Channel> channel = connect_channel(endpoint);
    const ShardSpec& shard = plan.shards[block_id];
    BlockTrainer block_trainer(shard.block_id, shard.initial, shard.views, shard.shared_ids,
                               shard.global_initial_count, trainer);
    run_worker_session(*channel, block_trainer, opt);
    return block_trainer.cloud();
}

} // namespace blocksplat
