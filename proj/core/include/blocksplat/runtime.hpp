#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "blocksplat/admm.hpp"
#include "blocksplat/scene.hpp"
#include "blocksplat/splitter.hpp"
#include "blocksplat/trainer.hpp"
#include "blocksplat/wire.hpp"

namespace blocksplat {

class TimeoutError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Ordered bidirectional message stream between the coordinator and one
// worker. A channel end belongs to a single thread.
class Channel {
public:
    virtual ~Channel() = default;
    virtual void send(const WireMessage& msg) = 0;
    // Blocks up to timeout_ms. Throws TimeoutError on expiry and
    // std::runtime_error once the peer is gone.
    virtual WireMessage recv(uint64_t timeout_ms) = 0;
};

// In-process pair backed by locked queues; destroying either end unblocks
// the peer.
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_local_channel_pair();

// TCP client end. `endpoint` is host:port; `retries` failed connects are
// retried with doubling delay before giving up.
std::unique_ptr<Channel> connect_channel(const std::string& endpoint, int retries = 3);

// TCP accept side. Binding to port 0 picks an ephemeral port; port()
// reports the bound one.
class ChannelListener {
public:
    explicit ChannelListener(const std::string& endpoint);
    ~ChannelListener();
    ChannelListener(const ChannelListener&) = delete;
    ChannelListener& operator=(const ChannelListener&) = delete;

    std::unique_ptr<Channel> accept(uint64_t timeout_ms);
    uint16_t port() const { return port_; }

private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

struct RoundDiagnostics {
    uint64_t iteration = 0;
    double primal_residual = 0;
    double dual_residual = 0;
    PropertyPenalties rho;
    double max_disagreement = 0;
    double dual_mean_linf = 0; // largest |mean over owners| of any dual component
    double mean_loss = 0;      // training loss averaged over blocks
    size_t shared_count = 0;
    size_t global_count = 0;
};

struct RunResult {
    GaussianCloud model;
    std::vector<RoundDiagnostics> rounds;
    double wall_seconds = 0;
};

// Everything one worker needs to train its block. Views point into images
// owned by the scene the plan was built from.
struct ShardSpec {
    uint32_t block_id = 0;
    GaussianCloud initial;
    std::vector<TrainView> views;
    std::vector<uint64_t> shared_ids;
    uint64_t global_initial_count = 0;
};

// Deterministic partition of a scene into shards plus the master-side
// bootstrap state.
struct ClusterPlan {
    GaussianCloud init_cloud;
    std::map<uint64_t, std::vector<uint32_t>> owners; // every ID, ascending lists
    std::vector<ShardSpec> shards;
    BlockPartition partition;
};

// Builds the initial cloud from the scene points, partitions space, and
// assigns views. Views whose index is a multiple of holdout_modulus are
// held out of training (0 keeps all). The scene must outlive the plan.
ClusterPlan plan_cluster(const LoadedScene& scene, uint32_t blocks, double expand_scale,
                         uint32_t holdout_modulus, const TrainerConfig& trainer,
                         const SplitOptions& split = {});

// Barrier iterations: interval, 2*interval, ... capped and terminated at
// total_iterations.
std::vector<uint64_t> consensus_schedule(uint64_t total_iterations, uint32_t interval);

struct SessionOptions {
    ConsensusConfig consensus;
    PropertyPenalties rho;
    uint64_t total_iterations = 3000;
    uint32_t nonshared_refresh = 10; // every Nth round also uploads non-shared rows
    uint64_t timeout_ms = 120000;
};

// Runs one block's training loop against the coordinator on the far side of
// `channel`: register, anchor broadcast, then per barrier upload / await
// consensus / acknowledge, until shutdown.
void run_worker_session(Channel& channel, BlockTrainer& trainer, const SessionOptions& opt);

// Coordinates `blocks` workers through every consensus round and returns
// the assembled global model. `channels` are unordered accepted ends;
// registration sorts out which block is which. The observer, when set,
// fires after each round's acknowledgements. `home_boxes` (one per block)
// enables assembly pruning: blocks grow capacity inside their expansion
// margins too, so without it the model would keep every block's copy of the
// same region; a single-owner row whose position falls in a foreign box is
// dropped, consensus rows represent the contested space.
RunResult run_master_session(std::vector<std::unique_ptr<Channel>> channels,
                             const GaussianCloud& init_cloud,
                             const std::map<uint64_t, std::vector<uint32_t>>& owners,
                             uint32_t blocks, const SessionOptions& opt,
                             const std::function<void(const RoundDiagnostics&)>& observer = {},
                             const std::vector<Aabb>* home_boxes = nullptr);

// Whole cluster in one process: K worker threads over queue channels, the
// master on the calling thread.
RunResult run_simulated(const ClusterPlan& plan, const TrainerConfig& trainer,
                        const SessionOptions& opt,
                        const std::function<void(const RoundDiagnostics&)>& observer = {});

// Socket coordinator: accepts `plan.shards.size()` workers on `listener`.
RunResult run_socket_master(ChannelListener& listener, const ClusterPlan& plan,
                            const SessionOptions& opt,
                            const std::function<void(const RoundDiagnostics&)>& observer = {});

// Socket worker for one block of the plan. Connects to `endpoint` and
// serves until shutdown. Returns the block's final local cloud.
GaussianCloud run_socket_worker(const std::string& endpoint, const ClusterPlan& plan,
                                uint32_t block_id, const TrainerConfig& trainer,
                                const SessionOptions& opt);

} // namespace blocksplat
