#include "fedsim/fed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/stats.hpp"

namespace fedsim::fed {

namespace {
constexpr uint64_t kInitTag = 0x1257a9d1;
constexpr uint64_t kRoundTag = 0x5ca8f01d;
constexpr uint64_t kNoiseTag = 0xd9005e;
constexpr uint64_t kPartTag = 0x9a47c1;
}  // namespace

std::string aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::fedavg: return "fedavg";
    case Aggregation::fedprox: return "fedprox";
    case Aggregation::scaffold: return "scaffold";
    case Aggregation::fedadam: return "fedadam";
    case Aggregation::fedper: return "fedper";
    case Aggregation::fedbn: return "fedbn";
  }
  throw ConfigError("unknown aggregation");
}

Aggregation parse_aggregation(const std::string& name) {
  if (name == "fedavg") return Aggregation::fedavg;
  if (name == "fedprox") return Aggregation::fedprox;
  if (name == "scaffold") return Aggregation::scaffold;
  if (name == "fedadam") return Aggregation::fedadam;
  if (name == "fedper") return Aggregation::fedper;
  if (name == "fedbn") return Aggregation::fedbn;
  throw ConfigError("unknown aggregation '" + name + "'");
}

std::string loss_name(ops::LossKind k) {
  switch (k) {
    case ops::LossKind::cross_entropy: return "cross_entropy";
    case ops::LossKind::bce: return "bce";
    case ops::LossKind::focal: return "focal";
  }
  throw ConfigError("unknown loss kind");
}

ops::LossKind parse_loss(const std::string& name) {
  if (name == "cross_entropy") return ops::LossKind::cross_entropy;
  if (name == "bce") return ops::LossKind::bce;
  if (name == "focal") return ops::LossKind::focal;
  throw ConfigError("unknown loss '" + name + "'");
}

void FedConfig::validate(const nn::ModelSpec& spec) const {
  spec.validate();
  if (rounds < 0) throw ConfigError("fed: rounds must be >= 0");
  if (local_steps < 0) throw ConfigError("fed: local_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("fed: batch_size must be >= 1");
  if (lr <= 0.0) throw ConfigError("fed: learning rate must be positive");
  if (prox_mu < 0.0) throw ConfigError("fed: fedprox mu must be >= 0");
  if (clip_grad_norm < 0.0) {
    throw ConfigError("fed: clip_grad_norm must be >= 0");
  }
  if (participation <= 0.0 || participation > 1.0) {
    throw ConfigError("fed: participation must lie in (0,1]");
  }
  if (parallel_clients < 1) {
    throw ConfigError("fed: parallel_clients must be >= 1");
  }
  if (aggregation == Aggregation::fedbn && !spec.has_batch_norm()) {
    throw ConfigError(
        "fed: fedbn personalizes batch-norm state and applies only to "
        "models with batch-norm layers");
  }
  if (dp && spec.has_batch_norm()) {
    throw ConfigError(
        "fed: differentially private training is incompatible with "
        "batch-norm models");
  }
  if (dp && (dp->clip_norm <= 0.0 || dp->noise_multiplier <= 0.0)) {
    throw ConfigError("fed: dp clip norm and noise multiplier must be > 0");
  }
}

uint64_t model_init_seed(const FedConfig& cfg) {
  return seed_for(cfg.seed, kInitTag);
}

uint64_t client_round_seed(const FedConfig& cfg, int client_id, int round) {
  const uint64_t cid =
      cfg.identical_client_seeds ? 0 : static_cast<uint64_t>(client_id);
  return seed_for(cfg.seed, kRoundTag, cid, static_cast<uint64_t>(round));
}

uint64_t dp_noise_seed(const FedConfig& cfg, int client_id, int round,
                       int step) {
  const uint64_t cid =
      cfg.identical_client_seeds ? 0 : static_cast<uint64_t>(client_id);
  return seed_for(seed_for(cfg.seed, kNoiseTag, cid),
                  static_cast<uint64_t>(round), static_cast<uint64_t>(step));
}

uint64_t participation_seed(const FedConfig& cfg, int round) {
  return seed_for(cfg.seed, kPartTag, static_cast<uint64_t>(round));
}

std::pair<std::vector<std::string>, std::vector<std::string>>
personalization_filter(Aggregation strategy,
                       const std::vector<std::string>& names) {
  std::vector<std::string> shared, personal;
  auto is_personal = [&](const std::string& n) {
    switch (strategy) {
      case Aggregation::fedper:
        return n.rfind("head.", 0) == 0;
      case Aggregation::fedbn:
        return n.find(".bn") != std::string::npos;
      default:
        return false;
    }
  };
  for (const auto& n : names) {
    (is_personal(n) ? personal : shared).push_back(n);
  }
  if (strategy == Aggregation::fedbn && personal.empty()) {
    throw ConfigError(
        "fedbn: the model has no batch-norm parameters to personalize");
  }
  return {shared, personal};
}

std::vector<double> aggregation_weights(const std::vector<int64_t>& counts) {
  if (counts.empty()) throw ConfigError("aggregate: no client updates");
  int64_t total = 0;
  for (int64_t c : counts) {
    if (c <= 0) throw ConfigError("aggregate: sample counts must be positive");
    total += c;
  }
  std::vector<double> w(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    w[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  // Fold the rounding residual into the last weight until the compensated
  // sum is exactly one.
  for (int pass = 0; pass < 4; ++pass) {
    const double residual = stats::kahan_sum(w) - 1.0;
    if (residual == 0.0) break;
    w.back() -= residual;
  }
  return w;
}

namespace {

std::vector<std::vector<double>> collect_grads(
    std::vector<nn::NamedTensor>& params) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (auto& [name, t] : params) {
    if (t.has_grad()) {
      grads.push_back(t.grad());
    } else {
      grads.emplace_back(t.values().size(), 0.0);
    }
  }
  return grads;
}

ParamVec zeros_like_names(const ParamVec& state,
                          const std::vector<std::string>& names) {
  ParamVec out;
  for (const auto& n : names) {
    const NamedVector* src = find_param(state, n);
    if (!src) throw ConfigError("unknown parameter name '" + n + "'");
    out.push_back(
        {n, src->shape, std::vector<double>(src->values.size(), 0.0)});
  }
  return out;
}

ParamVec slice_names(const ParamVec& state,
                     const std::vector<std::string>& names) {
  ParamVec out;
  for (const auto& n : names) {
    const NamedVector* src = find_param(state, n);
    if (!src) throw ConfigError("unknown parameter name '" + n + "'");
    out.push_back(*src);
  }
  return out;
}

Tensor class_weights_for(const data::ClientShard& shard, int num_classes) {
  std::vector<double> w(static_cast<size_t>(num_classes), 0.0);
  const double total = static_cast<double>(shard.size());
  for (int c = 0; c < num_classes; ++c) {
    const int64_t n = shard.label_histogram[static_cast<size_t>(c)];
    w[static_cast<size_t>(c)] =
        n > 0 ? total / (static_cast<double>(num_classes) *
                         static_cast<double>(n))
              : 0.0;
  }
  return Tensor::from_values(Shape{num_classes}, std::move(w));
}

}  // namespace

Tensor make_batch_images(const data::Dataset& ds,
                         const std::vector<int64_t>& indices,
                         std::pair<double, double> input_stats) {
  if (indices.empty()) throw DataError("make_batch: empty batch");
  const auto& first = ds.samples[static_cast<size_t>(indices[0])].image;
  const auto dims = first.shape().dims();
  std::vector<int64_t> bdims{static_cast<int64_t>(indices.size())};
  bdims.insert(bdims.end(), dims.begin(), dims.end());
  std::vector<double> out;
  out.reserve(static_cast<size_t>(Shape(bdims).numel()));
  const double m = input_stats.first, s = input_stats.second;
  for (int64_t idx : indices) {
    for (double v : ds.samples[static_cast<size_t>(idx)].image.values()) {
      out.push_back((v - m) / s);
    }
  }
  return Tensor::from_values(Shape(bdims), std::move(out));
}

Tensor make_batch_labels(const data::Dataset& ds,
                         const std::vector<int64_t>& indices) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (int64_t idx : indices) {
    out.push_back(
        static_cast<double>(ds.samples[static_cast<size_t>(idx)].label));
  }
  return Tensor::from_values(Shape{static_cast<int64_t>(indices.size())},
                             std::move(out));
}

ClientUpdate local_train(ClientState& client, const ParamVec& theta_global,
                         const nn::ModelSpec& spec,
                         const data::Dataset& train, const FedConfig& cfg,
                         int round, std::pair<double, double> input_stats,
                         const ParamVec* server_c) {
  if (client.shard.indices.empty()) {
    throw DataError("local_train: client shard is empty");
  }
  const bool scaffold = cfg.aggregation == Aggregation::scaffold;
  if (scaffold && !server_c) {
    throw ConfigError("local_train: scaffold requires the server variate");
  }
  nn::Model model = nn::build_model(spec, model_init_seed(cfg));
  model.import_state(theta_global);
  model.import_state(client.personal);

  auto params = model.named_parameters();
  if (scaffold && client.scaffold_c.size() != params.size()) {
    throw ConfigError("local_train: client control variate is uninitialized");
  }
  ClientOptimizer opt(cfg.optimizer, cfg.momentum);
  opt.import_state(client.opt_state);

  Tensor class_weights;
  if (cfg.class_weighted) {
    class_weights = class_weights_for(client.shard, spec.num_classes);
  }

  // Constant copies of the incoming globals for the proximal term.
  std::vector<Tensor> global_ref;
  if (cfg.aggregation == Aggregation::fedprox && cfg.prox_mu > 0.0) {
    for (auto& [name, t] : params) {
      const NamedVector* src = find_param(theta_global, name);
      if (!src) {
        throw ConfigError("fedprox: missing global entry '" + name + "'");
      }
      global_ref.push_back(Tensor::from_values(t.shape(), src->values));
    }
  }

  Rng rng(client_round_seed(cfg, client.id, round));
  const int64_t total_steps =
      static_cast<int64_t>(cfg.rounds) * cfg.local_steps;
  double loss_acc = 0.0;
  double lr_acc = 0.0;
  for (int step = 0; step < cfg.local_steps; ++step) {
    std::vector<int64_t> batch(static_cast<size_t>(cfg.batch_size));
    for (auto& b : batch) {
      b = client.shard.indices[static_cast<size_t>(
          rng.uniform_int(client.shard.size()))];
    }
    Tensor x = make_batch_images(train, batch, input_stats);
    Tensor y = make_batch_labels(train, batch);
    const double lr_now =
        scheduled_lr(cfg.scheduler, cfg.lr, client.sched_step, total_steps);
    lr_acc += lr_now;

    if (cfg.dp) {
      dp::dp_local_step(model, x, y, cfg.loss, class_weights,
                        cfg.focal_gamma, opt, lr_now, *cfg.dp, client.ledger,
                        dp_noise_seed(cfg, client.id, round, step));
      client.sched_step += 1;
      continue;
    }

    model.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::loss(model.forward(x, true), y, cfg.loss,
                            class_weights, cfg.focal_gamma);
    if (cfg.aggregation == Aggregation::fedprox && cfg.prox_mu > 0.0) {
      Tensor penalty;
      for (size_t i = 0; i < params.size(); ++i) {
        Tensor d = ops::sub(params[i].second, global_ref[i]);
        Tensor term = ops::reduce_sum_all(ops::square(d));
        penalty = penalty.defined() ? ops::add(penalty, term) : term;
      }
      loss = ops::add(loss, ops::mul_scalar(penalty, 0.5 * cfg.prox_mu));
    }
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw NumericError("local_train: non-finite loss on client " +
                         std::to_string(client.id) + " round " +
                         std::to_string(round) + " step " +
                         std::to_string(step));
    }
    loss_acc += loss_value;
    backward(loss);
    auto grads = collect_grads(params);
    if (cfg.clip_grad_norm > 0.0) {
      double norm2 = 0.0;
      for (const auto& g : grads) {
        for (double v : g) norm2 += v * v;
      }
      const double norm = std::sqrt(norm2);
      if (norm > cfg.clip_grad_norm) {
        const double scale = cfg.clip_grad_norm / norm;
        for (auto& g : grads) {
          for (double& v : g) v *= scale;
        }
      }
    }
    if (scaffold) {
      for (size_t i = 0; i < params.size(); ++i) {
        const auto& c = (*server_c)[i].values;
        const auto& ci = client.scaffold_c[i].values;
        for (size_t j = 0; j < grads[i].size(); ++j) {
          grads[i][j] += c[j] - ci[j];
        }
      }
    }
    opt.step(params, grads, lr_now);
    client.sched_step += 1;
  }

  ClientUpdate update;
  update.client_id = client.id;
  update.state = model.export_state();
  update.sample_count = client.shard.size();
  update.mean_loss = cfg.local_steps > 0 ? loss_acc / cfg.local_steps : 0.0;

  if (scaffold && cfg.local_steps > 0) {
    // Control-variate refresh without a second gradient pass:
    // c_i <- c_i - c + (theta_global - theta_i) / (K * lr_mean).
    const double lr_mean = lr_acc / cfg.local_steps;
    const double scale = 1.0 / (cfg.local_steps * lr_mean);
    ParamVec delta;
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& name = params[i].first;
      const NamedVector* g = find_param(theta_global, name);
      const auto& local = params[i].second.values();
      const auto& c = (*server_c)[i].values;
      auto& ci = client.scaffold_c[i].values;
      NamedVector d{name, client.scaffold_c[i].shape,
                    std::vector<double>(ci.size(), 0.0)};
      for (size_t j = 0; j < ci.size(); ++j) {
        const double ci_new =
            ci[j] - c[j] + (g->values[j] - local[j]) * scale;
        d.values[j] = ci_new - ci[j];
        ci[j] = ci_new;
      }
      delta.push_back(std::move(d));
    }
    update.scaffold_delta = std::move(delta);
  }

  std::vector<std::string> all_names;
  for (const auto& e : update.state) all_names.push_back(e.name);
  client.personal = slice_names(
      update.state, personalization_filter(cfg.aggregation, all_names).second);
  client.opt_state = opt.export_state();
  return update;
}

ParamVec aggregate(const std::vector<ClientUpdate>& updates,
                   Aggregation strategy, ServerState& server,
                   const FedConfig& cfg,
                   const std::vector<std::string>& personal_names) {
  if (updates.empty()) throw ConfigError("aggregate: no updates");
  std::vector<int64_t> counts;
  for (const auto& u : updates) counts.push_back(u.sample_count);
  const auto weights = aggregation_weights(counts);

  auto is_personal = [&](const std::string& n) {
    return std::find(personal_names.begin(), personal_names.end(), n) !=
           personal_names.end();
  };
  auto is_trainable = [&](const std::string& n) {
    return std::find(server.trainable_names.begin(),
                     server.trainable_names.end(),
                     n) != server.trainable_names.end();
  };

  ParamVec out = server.global;
  for (size_t e = 0; e < out.size(); ++e) {
    auto& entry = out[e];
    if (is_personal(entry.name)) continue;  // untouched by the server
    // Mean anchored at the first update: exact when all updates agree.
    const NamedVector* base = find_param(updates[0].state, entry.name);
    if (!base || base->values.size() != entry.values.size()) {
      throw ShapeError("aggregate: shape mismatch for parameter '" +
                       entry.name + "'");
    }
    std::vector<const NamedVector*> srcs;
    for (const auto& u : updates) {
      const NamedVector* p = find_param(u.state, entry.name);
      if (!p || p->values.size() != entry.values.size()) {
        throw ShapeError("aggregate: shape mismatch for parameter '" +
                         entry.name + "'");
      }
      srcs.push_back(p);
    }
    std::vector<double> mean(entry.values.size());
    for (size_t j = 0; j < mean.size(); ++j) {
      double sum = 0.0, comp = 0.0;
      for (size_t i = 0; i < srcs.size(); ++i) {
        const double x = weights[i] * (srcs[i]->values[j] - base->values[j]);
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x)) {
          comp += (sum - t) + x;
        } else {
          comp += (x - t) + sum;
        }
        sum = t;
      }
      mean[j] = base->values[j] + (sum + comp);
    }

    if (strategy == Aggregation::fedadam && is_trainable(entry.name)) {
      NamedVector* m = nullptr;
      NamedVector* v = nullptr;
      for (auto& mv : server.adam_m) {
        if (mv.name == entry.name) m = &mv;
      }
      for (auto& vv : server.adam_v) {
        if (vv.name == entry.name) v = &vv;
      }
      if (!m || !v) {
        throw ConfigError("aggregate: fedadam moments missing for '" +
                          entry.name + "'");
      }
      for (size_t j = 0; j < mean.size(); ++j) {
        const double pseudo = entry.values[j] - mean[j];
        m->values[j] = cfg.server_beta1 * m->values[j] +
                       (1.0 - cfg.server_beta1) * pseudo;
        v->values[j] = cfg.server_beta2 * v->values[j] +
                       (1.0 - cfg.server_beta2) * pseudo * pseudo;
        entry.values[j] -= cfg.server_lr * m->values[j] /
                           (std::sqrt(v->values[j]) + cfg.server_eps);
      }
    } else {
      entry.values = std::move(mean);
    }
  }

  if (strategy == Aggregation::scaffold) {
    // c += (|S|/N) * mean over participants of delta_i, computed as an
    // anchored compensated mean so identical deltas leave c_i == c exactly.
    const double participation_scale =
        static_cast<double>(updates.size()) /
        static_cast<double>(server.num_clients);
    const double inv_s = 1.0 / static_cast<double>(updates.size());
    for (auto& c : server.scaffold_c) {
      std::vector<const NamedVector*> deltas;
      for (const auto& u : updates) {
        if (!u.scaffold_delta) {
          throw ConfigError("aggregate: scaffold update without a delta");
        }
        const NamedVector* d = find_param(*u.scaffold_delta, c.name);
        if (!d) {
          throw ConfigError("aggregate: scaffold delta missing '" + c.name +
                            "'");
        }
        deltas.push_back(d);
      }
      for (size_t j = 0; j < c.values.size(); ++j) {
        const double base = deltas[0]->values[j];
        double sum = 0.0, comp = 0.0;
        for (const auto* d : deltas) {
          const double x = inv_s * (d->values[j] - base);
          const double t = sum + x;
          if (std::abs(sum) >= std::abs(x)) {
            comp += (sum - t) + x;
          } else {
            comp += (x - t) + sum;
          }
          sum = t;
        }
        c.values[j] += participation_scale * (base + (sum + comp));
      }
    }
  }
  return out;
}

std::pair<double, double> evaluate(const ParamVec& state,
                                   const nn::ModelSpec& spec,
                                   const data::Dataset& dataset,
                                   std::pair<double, double> input_stats,
                                   int batch_size) {
  if (dataset.samples.empty()) return {0.0, 0.0};
  nn::Model model = nn::build_model(spec, 0);
  model.import_state(state);
  int64_t correct = 0;
  double loss_sum = 0.0;
  const int64_t n = static_cast<int64_t>(dataset.samples.size());
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min(n, start + batch_size);
    std::vector<int64_t> idx;
    for (int64_t i = start; i < stop; ++i) idx.push_back(i);
    Tensor x = make_batch_images(dataset, idx, input_stats);
    Tensor y = make_batch_labels(dataset, idx);
    Tensor logits = model.forward(x, false);
    const int64_t k = logits.shape().dim(1);
    for (int64_t b = 0; b < stop - start; ++b) {
      int64_t arg = 0;
      double best = logits.values()[static_cast<size_t>(b * k)];
      for (int64_t j = 1; j < k; ++j) {
        const double v = logits.values()[static_cast<size_t>(b * k + j)];
        if (v > best) {
          best = v;
          arg = j;
        }
      }
      if (arg == dataset.samples[static_cast<size_t>(start + b)].label) {
        ++correct;
      }
    }
    loss_sum += ops::cross_entropy(logits, y).item() *
                static_cast<double>(stop - start);
  }
  return {static_cast<double>(correct) / static_cast<double>(n),
          loss_sum / static_cast<double>(n)};
}

namespace {

std::vector<int> sample_participants(int num_clients, double fraction,
                                     uint64_t seed) {
  const int k = std::max(
      1, static_cast<int>(std::llround(fraction * num_clients)));
  std::vector<int> ids(static_cast<size_t>(num_clients));
  for (int i = 0; i < num_clients; ++i) ids[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(ids);
  ids.resize(static_cast<size_t>(std::min(k, num_clients)));
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

FederationResult run_federation(const nn::ModelSpec& spec,
                                const data::Dataset& train,
                                const std::vector<data::ClientShard>& shards,
                                const data::Dataset& test,
                                const FedConfig& cfg) {
  cfg.validate(spec);
  if (shards.empty()) throw ConfigError("run_federation: no client shards");
  for (const auto& s : shards) {
    if (s.indices.empty()) {
      throw DataError("run_federation: empty shard for client " +
                      std::to_string(s.client_id));
    }
  }
  const std::pair<double, double> input_stats =
      cfg.normalize_input ? train.scalar_stats()
                          : std::pair<double, double>{0.0, 1.0};

  ServerState server;
  {
    nn::Model init = nn::build_model(spec, model_init_seed(cfg));
    server.global = init.export_state();
    for (auto& [name, t] : init.named_parameters()) {
      server.trainable_names.push_back(name);
    }
  }
  server.num_clients = static_cast<int>(shards.size());
  server.scaffold_c = zeros_like_names(server.global, server.trainable_names);
  if (cfg.aggregation == Aggregation::fedadam) {
    server.adam_m = zeros_like_names(server.global, server.trainable_names);
    server.adam_v = zeros_like_names(server.global, server.trainable_names);
  }

  std::vector<std::string> all_names;
  for (const auto& e : server.global) all_names.push_back(e.name);
  const auto personal_names =
      personalization_filter(cfg.aggregation, all_names).second;

  std::vector<ClientState> clients;
  for (const auto& s : shards) {
    ClientState c;
    c.id = s.client_id;
    c.shard = s;
    c.personal = [&] {
      ParamVec out;
      for (const auto& n : personal_names) out.push_back(*find_param(server.global, n));
      return out;
    }();
    c.scaffold_c = zeros_like_names(server.global, server.trainable_names);
    if (cfg.dp) {
      const double q = std::min(
          1.0, static_cast<double>(cfg.batch_size) /
                   static_cast<double>(s.size()));
      c.ledger = dp::PrivacyLedger::make(dp::default_order_grid(), q,
                                         cfg.dp->noise_multiplier);
    }
    clients.push_back(std::move(c));
  }

  const bool track_personal = cfg.aggregation == Aggregation::fedper ||
                              cfg.aggregation == Aggregation::fedbn;

  FederationResult result;
  result.input_stats = input_stats;
  for (int round = 0; round < cfg.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto participants = sample_participants(
        server.num_clients, cfg.participation, participation_seed(cfg, round));

    std::vector<ClientUpdate> updates(participants.size());
    std::vector<std::exception_ptr> errors(participants.size());
    const int pool = std::min<int>(cfg.parallel_clients,
                                   static_cast<int>(participants.size()));
    auto work = [&](int worker) {
      for (size_t slot = static_cast<size_t>(worker);
           slot < participants.size(); slot += static_cast<size_t>(pool)) {
        try {
          updates[slot] = local_train(
              clients[static_cast<size_t>(participants[slot])], server.global,
              spec, train, cfg, round, input_stats, &server.scaffold_c);
        } catch (...) {
          errors[slot] = std::current_exception();
        }
      }
    };
    if (pool <= 1) {
      work(0);
    } else {
      std::vector<std::thread> threads;
      for (int w = 0; w < pool; ++w) threads.emplace_back(work, w);
      for (auto& t : threads) t.join();
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    server.global =
        aggregate(updates, cfg.aggregation, server, cfg, personal_names);
    server.round = round + 1;

    RoundMetrics metrics;
    metrics.round = round;
    for (const auto& u : updates) {
      metrics.client_loss.emplace_back(u.client_id, u.mean_loss);
    }
    const auto [acc, loss] = evaluate(server.global, spec, test, input_stats);
    metrics.global_accuracy = acc;
    metrics.global_loss = loss;
    if (track_personal && !test.samples.empty()) {
      for (const auto& u : updates) {
        const auto [pacc, ploss] =
            evaluate(u.state, spec, test, input_stats);
        auto& client = clients[static_cast<size_t>(u.client_id)];
        client.best_accuracy = std::max(client.best_accuracy, pacc);
      }
      for (const auto& c : clients) {
        if (c.best_accuracy >= 0.0) {
          metrics.client_best_accuracy.emplace_back(c.id, c.best_accuracy);
        }
      }
    }
    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.rounds.push_back(std::move(metrics));
  }
  result.final_state = server.global;
  result.clients = std::move(clients);
  result.server_scaffold_c = server.scaffold_c;
  return result;
}

}  // namespace fedsim::fed
