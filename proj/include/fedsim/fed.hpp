#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/dp.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/params.hpp"

namespace fedsim::fed {

enum class Aggregation { fedavg, fedprox, scaffold, fedadam, fedper, fedbn };

std::string aggregation_name(Aggregation a);
Aggregation parse_aggregation(const std::string& name);
std::string loss_name(ops::LossKind k);
ops::LossKind parse_loss(const std::string& name);

struct FedConfig {
  int rounds = 30;
  int local_steps = 10;
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double lr = 0.05;
  double momentum = 0.0;
  SchedulerKind scheduler = SchedulerKind::none;
  Aggregation aggregation = Aggregation::fedavg;
  double prox_mu = 0.0;
  double server_lr = 1e-2;      // fedadam
  double server_beta1 = 0.9;
  double server_beta2 = 0.99;
  double server_eps = 1e-3;
  double participation = 1.0;
  double clip_grad_norm = 0.0;  // 0 disables global-norm clipping
  ops::LossKind loss = ops::LossKind::cross_entropy;
  double focal_gamma = 2.0;
  bool class_weighted = false;
  bool normalize_input = true;
  int parallel_clients = 1;
  // Diagnostic: derive batch streams from (seed, round) only, so clients
  // with identical shards draw identical batches.
  bool identical_client_seeds = false;
  uint64_t seed = 0;
  std::optional<dp::DpConfig> dp;

  void validate(const nn::ModelSpec& spec) const;
  bool operator==(const FedConfig&) const = default;
};

struct ServerState {
  ParamVec global;                           // parameters then buffers
  std::vector<std::string> trainable_names;  // server-optimizer targets
  ParamVec scaffold_c;                       // trainable names only
  ParamVec adam_m, adam_v;
  int round = 0;
  int num_clients = 0;
};

struct ClientState {
  int id = 0;
  data::ClientShard shard;
  ParamVec personal;    // values of the personal parameter subset
  ParamVec scaffold_c;  // client control variate
  ParamVec opt_state;   // persisted optimizer moments
  int64_t sched_step = 0;
  dp::PrivacyLedger ledger;  // populated when dp is enabled
  double best_accuracy = -1.0;
};

struct ClientUpdate {
  int client_id = 0;
  ParamVec state;  // full model state, personal entries included
  int64_t sample_count = 0;
  std::optional<ParamVec> scaffold_delta;
  double mean_loss = 0.0;
};

struct RoundMetrics {
  int round = 0;
  std::vector<std::pair<int, double>> client_loss;  // participants
  double global_accuracy = 0.0;
  double global_loss = 0.0;
  std::vector<std::pair<int, double>> client_best_accuracy;  // pFL tracking
  double wall_seconds = 0.0;  // reported, never serialized
};

// Seed derivations shared by the trainer and by reproduction tooling.
uint64_t model_init_seed(const FedConfig& cfg);
uint64_t client_round_seed(const FedConfig& cfg, int client_id, int round);
uint64_t dp_noise_seed(const FedConfig& cfg, int client_id, int round,
                       int step);
uint64_t participation_seed(const FedConfig& cfg, int round);

// (shared, personal) name split. fedper keeps the classifier head private;
// fedbn keeps batch-norm affine parameters and running statistics private
// and rejects models without batch norm.
std::pair<std::vector<std::string>, std::vector<std::string>>
personalization_filter(Aggregation strategy,
                       const std::vector<std::string>& names);

// Client weights n_i / sum(n); the last entry absorbs the rounding residual
// so the compensated sum of the vector is exactly 1.
std::vector<double> aggregation_weights(const std::vector<int64_t>& counts);

// Runs the configured number of local steps from theta_global and returns
// the resulting full state. Personal parameters are restored before training
// and retained in the client state afterwards. server_c is the server
// control variate, required when the strategy is scaffold.
ClientUpdate local_train(ClientState& client, const ParamVec& theta_global,
                         const nn::ModelSpec& spec,
                         const data::Dataset& train, const FedConfig& cfg,
                         int round, std::pair<double, double> input_stats,
                         const ParamVec* server_c = nullptr);

// Weighted aggregation into a new global state. fedadam converts the mean
// into a pseudo-gradient and applies a server Adam step to the trainable
// entries; personal entries are never touched.
ParamVec aggregate(const std::vector<ClientUpdate>& updates,
                   Aggregation strategy, ServerState& server,
                   const FedConfig& cfg,
                   const std::vector<std::string>& personal_names);

// (accuracy, mean cross-entropy) of a state snapshot on a labeled dataset.
std::pair<double, double> evaluate(const ParamVec& state,
                                   const nn::ModelSpec& spec,
                                   const data::Dataset& dataset,
                                   std::pair<double, double> input_stats,
                                   int batch_size = 64);

struct FederationResult {
  std::vector<RoundMetrics> rounds;
  ParamVec final_state;
  std::vector<ClientState> clients;
  ParamVec server_scaffold_c;
  std::pair<double, double> input_stats{0.0, 1.0};
};

FederationResult run_federation(const nn::ModelSpec& spec,
                                const data::Dataset& train,
                                const std::vector<data::ClientShard>& shards,
                                const data::Dataset& test,
                                const FedConfig& cfg);

// Batch assembly with scalar input normalization.
Tensor make_batch_images(const data::Dataset& ds,
                         const std::vector<int64_t>& indices,
                         std::pair<double, double> input_stats);
Tensor make_batch_labels(const data::Dataset& ds,
                         const std::vector<int64_t>& indices);

}  // namespace fedsim::fed
