#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedsim/error.hpp"
#include "fedsim/fed.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/stats.hpp"

using namespace fedsim;
using namespace fedsim::fed;

namespace {

nn::ModelSpec tiny_spec(nn::Arch arch = nn::Arch::anfr) {
  nn::ModelSpec s = nn::ModelSpec::for_arch(arch);
  s.widths = {4, 8};
  s.depths = {1, 1};
  s.num_classes = 3;
  s.groups = 2;
  s.se_reduction = 2;
  s.in_channels = 3;
  s.in_height = 8;
  s.in_width = 8;
  return s;
}

FedConfig tiny_cfg() {
  FedConfig cfg;
  cfg.rounds = 2;
  cfg.local_steps = 3;
  cfg.batch_size = 8;
  cfg.lr = 0.05;
  cfg.seed = 5;
  return cfg;
}

struct Fixture {
  data::Dataset train;
  std::vector<data::ClientShard> shards;
  data::Dataset test;
  Fixture(int clients = 3, int per_client = 30) {
    auto [tr, sh] = data::gen_colorshift(clients, 3, per_client, 0.8, 8, 21);
    train = std::move(tr);
    shards = std::move(sh);
    auto [te, tsh] = data::gen_colorshift(clients, 3, 10, 0.0, 8, 22);
    test = std::move(te);
  }
};

bool same_state(const ParamVec& a, const ParamVec& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].values != b[i].values) return false;
  }
  return true;
}

ClientState fresh_client(const data::ClientShard& shard,
                         const ParamVec& global,
                         const std::vector<std::string>& trainable) {
  ClientState c;
  c.id = shard.client_id;
  c.shard = shard;
  for (const auto& n : trainable) {
    const NamedVector* src = find_param(global, n);
    c.scaffold_c.push_back(
        {n, src->shape, std::vector<double>(src->values.size(), 0.0)});
  }
  return c;
}

}  // namespace

TEST_CASE("zero local steps leave the parameters unchanged") {
  Fixture fx;
  nn::ModelSpec spec = tiny_spec();
  FedConfig cfg = tiny_cfg();
  cfg.local_steps = 0;
  nn::Model m = nn::build_model(spec, model_init_seed(cfg));
  ParamVec global = m.export_state();
  ClientState client = fresh_client(fx.shards[0], global, {});
  auto update = local_train(client, global, spec, fx.train, cfg, 0, {0, 1});
  CHECK(same_state(update.state, global));
}

TEST_CASE("fedprox with mu 0 matches fedavg bit for bit") {
  Fixture fx;
  nn::ModelSpec spec = tiny_spec();
  FedConfig avg = tiny_cfg();
  FedConfig prox = avg;
  prox.aggregation = Aggregation::fedprox;
  prox.prox_mu = 0.0;
  nn::Model m = nn::build_model(spec, model_init_seed(avg));
  ParamVec global = m.export_state();
  ClientState c1 = fresh_client(fx.shards[0], global, {});
  ClientState c2 = fresh_client(fx.shards[0], global, {});
  auto u1 = local_train(c1, global, spec, fx.train, avg, 0, {0, 1});
  auto u2 = local_train(c2, global, spec, fx.train, prox, 0, {0, 1});
  CHECK(same_state(u1.state, u2.state));
}

TEST_CASE("single client single step equals one centralized step") {
  Fixture fx(1, 40);
  nn::ModelSpec spec = tiny_spec();
  FedConfig cfg = tiny_cfg();
  cfg.rounds = 1;
  cfg.local_steps = 1;
  cfg.normalize_input = false;

  // Centralized oracle: one SGD step on the same batch from the same init.
  nn::Model oracle = nn::build_model(spec, model_init_seed(cfg));
  Rng rng(client_round_seed(cfg, 0, 0));
  std::vector<int64_t> batch(static_cast<size_t>(cfg.batch_size));
  for (auto& b : batch) {
    b = fx.shards[0].indices[static_cast<size_t>(
        rng.uniform_int(fx.shards[0].size()))];
  }
  Tensor x = make_batch_images(fx.train, batch, {0, 1});
  Tensor y = make_batch_labels(fx.train, batch);
  auto params = oracle.named_parameters();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(ops::cross_entropy(oracle.forward(x, true), y));
  }
  for (auto& [name, t] : params) {
    auto& v = t.mutable_values();
    const auto& g = t.grad();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= cfg.lr * g[i];
  }
  ParamVec expect = oracle.export_state();

  auto result = run_federation(spec, fx.train, fx.shards, fx.test, cfg);
  CHECK(same_state(result.final_state, expect));
}

TEST_CASE("aggregation weights sum to exactly one") {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform_int(9));
    std::vector<int64_t> counts;
    for (int i = 0; i < n; ++i) counts.push_back(1 + rng.uniform_int(1000));
    const auto w = aggregation_weights(counts);
    CHECK(stats::kahan_sum(w) == 1.0);
  }
}

TEST_CASE("aggregate: weighted mean trivials and brute-force oracle") {
  ServerState server;
  server.global = {{"w", {1}, {0.0}}};
  server.trainable_names = {"w"};
  server.num_clients = 2;
  FedConfig cfg = tiny_cfg();

  SUBCASE("two clients with sizes 1 and 3") {
    std::vector<ClientUpdate> ups(2);
    ups[0] = {0, {{"w", {1}, {1.0}}}, 1, {}, 0.0};
    ups[1] = {1, {{"w", {1}, {3.0}}}, 3, {}, 0.0};
    auto out = aggregate(ups, Aggregation::fedavg, server, cfg, {});
    CHECK(out[0].values[0] == 2.5);
  }

  SUBCASE("identical updates are returned exactly") {
    std::vector<ClientUpdate> ups(3);
    const std::vector<double> vals{0.1234567890123456, -7.25, 3.0e-17};
    for (int i = 0; i < 3; ++i) {
      ups[static_cast<size_t>(i)] = {i, {{"w", {3}, vals}}, 7 + i, {}, 0.0};
    }
    server.global = {{"w", {3}, {0.0, 0.0, 0.0}}};
    auto out = aggregate(ups, Aggregation::fedavg, server, cfg, {});
    CHECK(out[0].values == vals);
  }

  SUBCASE("five random vectors match the brute-force weighted mean") {
    Rng rng(11);
    const int64_t dim = 17;
    std::vector<ClientUpdate> ups(5);
    std::vector<int64_t> counts;
    for (int i = 0; i < 5; ++i) {
      std::vector<double> v(static_cast<size_t>(dim));
      for (double& x : v) x = rng.normal();
      const int64_t n = 1 + rng.uniform_int(50);
      counts.push_back(n);
      ups[static_cast<size_t>(i)] = {i, {{"w", {dim}, v}}, n, {}, 0.0};
    }
    server.global = {{"w", {dim}, std::vector<double>(static_cast<size_t>(dim), 0.0)}};
    auto out = aggregate(ups, Aggregation::fedavg, server, cfg, {});
    int64_t total = 0;
    for (int64_t c : counts) total += c;
    for (int64_t j = 0; j < dim; ++j) {
      double ref = 0.0;
      for (int i = 0; i < 5; ++i) {
        ref += static_cast<double>(counts[static_cast<size_t>(i)]) /
               static_cast<double>(total) *
               ups[static_cast<size_t>(i)].state[0].values[static_cast<size_t>(j)];
      }
      CHECK(std::abs(out[0].values[static_cast<size_t>(j)] - ref) < 1e-12);
    }
  }

  SUBCASE("fedadam matches a standalone Adam oracle") {
    Rng rng(13);
    const int64_t dim = 9;
    std::vector<double> g0(static_cast<size_t>(dim)), up1(static_cast<size_t>(dim)),
        up2(static_cast<size_t>(dim));
    for (auto* v : {&g0, &up1, &up2}) {
      for (double& x : *v) x = rng.normal();
    }
    server.global = {{"w", {dim}, g0}};
    server.adam_m = {{"w", {dim}, std::vector<double>(static_cast<size_t>(dim), 0.0)}};
    server.adam_v = {{"w", {dim}, std::vector<double>(static_cast<size_t>(dim), 0.0)}};
    std::vector<ClientUpdate> ups(2);
    ups[0] = {0, {{"w", {dim}, up1}}, 2, {}, 0.0};
    ups[1] = {1, {{"w", {dim}, up2}}, 6, {}, 0.0};
    auto out = aggregate(ups, Aggregation::fedadam, server, cfg, {});
    // Oracle: pseudo-gradient followed by one Adam update without bias
    // correction.
    for (int64_t j = 0; j < dim; ++j) {
      const double mean = 0.25 * up1[static_cast<size_t>(j)] +
                          0.75 * up2[static_cast<size_t>(j)];
      const double pseudo = g0[static_cast<size_t>(j)] - mean;
      const double m = (1.0 - cfg.server_beta1) * pseudo;
      const double v = (1.0 - cfg.server_beta2) * pseudo * pseudo;
      const double expect =
          g0[static_cast<size_t>(j)] -
          cfg.server_lr * m / (std::sqrt(v) + cfg.server_eps);
      CHECK(std::abs(out[0].values[static_cast<size_t>(j)] - expect) < 1e-12);
    }
  }
}

TEST_CASE("personalization filter") {
  nn::Model gn = nn::build_model(tiny_spec(nn::Arch::gn_resnet), 1);
  std::vector<std::string> gn_names;
  for (const auto& e : gn.export_state()) gn_names.push_back(e.name);
  CHECK_THROWS_AS(personalization_filter(Aggregation::fedbn, gn_names),
                  ConfigError);

  auto [shared_none, personal_none] =
      personalization_filter(Aggregation::fedavg, gn_names);
  CHECK(personal_none.empty());
  CHECK(shared_none.size() == gn_names.size());

  nn::Model anfr = nn::build_model(tiny_spec(nn::Arch::anfr), 1);
  std::vector<std::string> anfr_names;
  for (const auto& e : anfr.export_state()) anfr_names.push_back(e.name);
  auto [shared, personal] =
      personalization_filter(Aggregation::fedper, anfr_names);
  CHECK(personal == std::vector<std::string>{"head.weight", "head.bias"});
  CHECK(shared.size() + personal.size() == anfr_names.size());

  nn::Model bn = nn::build_model(tiny_spec(nn::Arch::bn_resnet), 1);
  std::vector<std::string> bn_names;
  for (const auto& e : bn.export_state()) bn_names.push_back(e.name);
  auto [bshared, bpersonal] =
      personalization_filter(Aggregation::fedbn, bn_names);
  for (const auto& n : bpersonal) {
    CHECK(n.find(".bn") != std::string::npos);
  }
  // Every gamma/beta/running entry of a bn layer lands in the personal set.
  for (const auto& n : bn_names) {
    const bool is_bn = n.find(".bn") != std::string::npos;
    const bool in_personal =
        std::find(bpersonal.begin(), bpersonal.end(), n) != bpersonal.end();
    CHECK(is_bn == in_personal);
  }
}

TEST_CASE("fedper keeps personal parameters untouched by aggregation") {
  Fixture fx;
  nn::ModelSpec spec = tiny_spec();
  FedConfig cfg = tiny_cfg();
  cfg.aggregation = Aggregation::fedper;
  cfg.rounds = 2;
  auto result = run_federation(spec, fx.train, fx.shards, fx.test, cfg);
  // Server head must still equal the initialization (never aggregated).
  nn::Model init = nn::build_model(spec, model_init_seed(cfg));
  ParamVec init_state = init.export_state();
  for (const char* n : {"head.weight", "head.bias"}) {
    CHECK(find_param(result.final_state, n)->values ==
          find_param(init_state, n)->values);
  }
  // Client personal state survives and differs from the global head.
  for (const auto& c : result.clients) {
    REQUIRE(c.personal.size() == 2);
    CHECK(c.personal[0].name == "head.weight");
    CHECK(c.personal[0].values != find_param(init_state, "head.weight")->values);
  }
}

TEST_CASE("scaffold server variate equals the client mean after full participation") {
  Fixture fx;
  nn::ModelSpec spec = tiny_spec();
  FedConfig cfg = tiny_cfg();
  cfg.aggregation = Aggregation::scaffold;
  cfg.rounds = 3;
  auto result = run_federation(spec, fx.train, fx.shards, fx.test, cfg);
  REQUIRE(result.server_scaffold_c.size() > 0);
  for (size_t e = 0; e < result.server_scaffold_c.size(); ++e) {
    const auto& c = result.server_scaffold_c[e];
    for (size_t j = 0; j < c.values.size(); ++j) {
      double mean = 0.0;
      for (const auto& client : result.clients) {
        mean += client.scaffold_c[e].values[j];
      }
      mean /= static_cast<double>(result.clients.size());
      CHECK(std::abs(c.values[j] - mean) < 1e-12);
    }
  }
}

TEST_CASE("scaffold with identical IID clients matches fedavg bit for bit") {
  // Every client holds the same shard and draws the same batches, so all
  // control variates stay equal and the correction vanishes.
  auto [train, shards] = data::gen_colorshift(1, 3, 40, 0.0, 8, 31);
  std::vector<data::ClientShard> same(3);
  for (int i = 0; i < 3; ++i) {
    same[static_cast<size_t>(i)] = shards[0];
    same[static_cast<size_t>(i)].client_id = i;
  }
  auto [test, tsh] = data::gen_colorshift(1, 3, 10, 0.0, 8, 32);
  nn::ModelSpec spec = tiny_spec();
  FedConfig base = tiny_cfg();
  base.rounds = 2;
  base.identical_client_seeds = true;
  FedConfig scaf = base;
  scaf.aggregation = Aggregation::scaffold;
  auto ra = run_federation(spec, train, same, test, base);
  auto rs = run_federation(spec, train, same, test, scaf);
  CHECK(same_state(ra.final_state, rs.final_state));
  REQUIRE(ra.rounds.size() == rs.rounds.size());
  for (size_t r = 0; r < ra.rounds.size(); ++r) {
    CHECK(ra.rounds[r].global_accuracy == rs.rounds[r].global_accuracy);
    CHECK(ra.rounds[r].global_loss == rs.rounds[r].global_loss);
  }
}

TEST_CASE("a large proximal coefficient shrinks client drift") {
  Fixture fx;
  nn::ModelSpec spec = tiny_spec();
  FedConfig loose = tiny_cfg();
  loose.aggregation = Aggregation::fedprox;
  loose.prox_mu = 0.0;
  // Keep lr * mu well below the stability bound of the quadratic penalty.
  loose.lr = 1e-4;
  FedConfig tight = loose;
  tight.prox_mu = 1e3;
  nn::Model m = nn::build_model(spec, model_init_seed(loose));
  ParamVec global = m.export_state();
  for (const auto& shard : fx.shards) {
    ClientState c1 = fresh_client(shard, global, {});
    ClientState c2 = fresh_client(shard, global, {});
    auto u1 = local_train(c1, global, spec, fx.train, loose, 0, {0, 1});
    auto u2 = local_train(c2, global, spec, fx.train, tight, 0, {0, 1});
    double d1 = 0.0, d2 = 0.0;
    for (size_t e = 0; e < global.size(); ++e) {
      for (size_t j = 0; j < global[e].values.size(); ++j) {
        const double a = u1.state[e].values[j] - global[e].values[j];
        const double b = u2.state[e].values[j] - global[e].values[j];
        d1 += a * a;
        d2 += b * b;
      }
    }
    CHECK(std::sqrt(d2) < std::sqrt(d1));
  }
}

TEST_CASE("zero rounds returns the initial model and no metrics") {
  Fixture fx;
  nn::ModelSpec spec = tiny_spec();
  FedConfig cfg = tiny_cfg();
  cfg.rounds = 0;
  auto result = run_federation(spec, fx.train, fx.shards, fx.test, cfg);
  CHECK(result.rounds.empty());
  nn::Model init = nn::build_model(spec, model_init_seed(cfg));
  CHECK(same_state(result.final_state, init.export_state()));
}

TEST_CASE("federation runs are deterministic and parallelism-invariant") {
  Fixture fx;
  nn::ModelSpec spec = tiny_spec();
  FedConfig cfg = tiny_cfg();
  cfg.rounds = 2;
  auto r1 = run_federation(spec, fx.train, fx.shards, fx.test, cfg);
  auto r2 = run_federation(spec, fx.train, fx.shards, fx.test, cfg);
  FedConfig par = cfg;
  par.parallel_clients = 3;
  auto r3 = run_federation(spec, fx.train, fx.shards, fx.test, par);
  CHECK(same_state(r1.final_state, r2.final_state));
  CHECK(same_state(r1.final_state, r3.final_state));
  REQUIRE(r1.rounds.size() == r3.rounds.size());
  for (size_t r = 0; r < r1.rounds.size(); ++r) {
    CHECK(r1.rounds[r].global_accuracy == r3.rounds[r].global_accuracy);
    CHECK(r1.rounds[r].client_loss == r3.rounds[r].client_loss);
  }
}

TEST_CASE("partial participation selects a deterministic nonempty subset") {
  Fixture fx(4, 24);
  nn::ModelSpec spec = tiny_spec();
  FedConfig cfg = tiny_cfg();
  cfg.rounds = 2;
  cfg.participation = 0.5;
  auto r1 = run_federation(spec, fx.train, fx.shards, fx.test, cfg);
  auto r2 = run_federation(spec, fx.train, fx.shards, fx.test, cfg);
  for (size_t r = 0; r < r1.rounds.size(); ++r) {
    CHECK(r1.rounds[r].client_loss.size() == 2);
    CHECK(r1.rounds[r].client_loss == r2.rounds[r].client_loss);
  }
}

TEST_CASE("fedbn requires batch-norm models") {
  Fixture fx;
  FedConfig cfg = tiny_cfg();
  cfg.aggregation = Aggregation::fedbn;
  CHECK_THROWS_AS(cfg.validate(tiny_spec(nn::Arch::gn_resnet)), ConfigError);
  CHECK_NOTHROW(cfg.validate(tiny_spec(nn::Arch::bn_resnet)));
}
