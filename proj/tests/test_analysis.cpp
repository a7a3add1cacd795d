#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedsim/analysis.hpp"
#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/stats.hpp"

using namespace fedsim;
using namespace fedsim::analysis;

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

data::Dataset tiny_dataset(uint64_t seed, int per_client = 30) {
  auto [ds, shards] = data::gen_colorshift(3, 3, per_client, 0.6, 8, seed);
  return std::move(ds);
}

}  // namespace

TEST_CASE("csi hand values") {
  CHECK(csi({1.0, 0.0, 0.0}) == 1.0);
  CHECK(csi({0.7, 0.7, 0.7}) == 0.0);
  CHECK(csi({0.75, 0.25, 0.25}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(csi({0.0, 0.0}) == 0.0);  // dead neuron
  CHECK_THROWS_AS(csi({1.0}), ConfigError);
}

TEST_CASE("csi lies in [0,1] for non-negative activations and is scale invariant") {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> mu(4);
    for (double& v : mu) v = std::abs(rng.normal());
    const double v1 = csi(mu);
    CHECK(v1 >= 0.0);
    CHECK(v1 <= 1.0);
    std::vector<double> scaled = mu;
    const double s = 0.1 + 10.0 * rng.uniform();
    for (double& v : scaled) v *= s;
    CHECK(csi(scaled) == doctest::Approx(v1).epsilon(1e-12));
  }
}

TEST_CASE("capture_class_conditional") {
  data::Dataset ds = tiny_dataset(5);
  nn::Model model = nn::build_model(tiny_spec(), 7);
  const std::vector<std::string> probes{"stage1.block0.pre_att",
                                        "stage1.block0.post_att"};

  SUBCASE("matches a per-sample accumulation oracle") {
    auto caps = capture_class_conditional(model, ds, probes, {0.0, 1.0}, 16);
    REQUIRE(caps.size() == 2);
    // Oracle: one forward per sample, accumulate by hand.
    std::vector<std::vector<double>> acc(
        3, std::vector<double>(caps[0].class_mean[0].size(), 0.0));
    std::vector<int64_t> counts(3, 0);
    struct OneSink : nn::ProbeSink {
      std::string want;
      std::vector<double> channel_mean;
      void capture(const std::string& name, const Tensor& v) override {
        if (name != want) return;
        const int64_t c = v.shape().dim(1);
        const int64_t plane = v.shape().dim(2) * v.shape().dim(3);
        channel_mean.assign(static_cast<size_t>(c), 0.0);
        for (int64_t ch = 0; ch < c; ++ch) {
          for (int64_t p = 0; p < plane; ++p) {
            channel_mean[static_cast<size_t>(ch)] +=
                v.values()[static_cast<size_t>(ch * plane + p)] /
                static_cast<double>(plane);
          }
        }
      }
    } sink;
    sink.want = probes[0];
    for (const auto& sample : ds.samples) {
      std::vector<double> vals = sample.image.values();
      Tensor x = Tensor::from_values(
          Shape{1, 3, 8, 8}, std::move(vals));
      model.forward(x, false, &sink);
      for (size_t ch = 0; ch < sink.channel_mean.size(); ++ch) {
        acc[static_cast<size_t>(sample.label)][ch] += sink.channel_mean[ch];
      }
      counts[static_cast<size_t>(sample.label)] += 1;
    }
    for (int c = 0; c < 3; ++c) {
      for (size_t ch = 0; ch < acc[static_cast<size_t>(c)].size(); ++ch) {
        const double ref = acc[static_cast<size_t>(c)][ch] /
                           static_cast<double>(counts[static_cast<size_t>(c)]);
        CHECK(std::abs(caps[0].class_mean[static_cast<size_t>(c)][ch] - ref) <
              1e-10);
      }
    }
  }

  SUBCASE("post-attention probes are non-negative") {
    auto caps = capture_class_conditional(model, ds, probes, {0.0, 1.0});
    for (const auto& pa : caps) {
      for (const auto& row : pa.class_mean) {
        for (double v : row) CHECK(v >= 0.0);
      }
    }
  }

  SUBCASE("is order invariant") {
    auto caps1 = capture_class_conditional(model, ds, probes, {0.0, 1.0}, 16);
    data::Dataset shuffled;
    shuffled.num_classes = ds.num_classes;
    std::vector<size_t> order(ds.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(17);
    for (size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i],
                order[static_cast<size_t>(rng.uniform_int(
                    static_cast<int64_t>(i + 1)))]);
    }
    for (size_t i : order) shuffled.samples.push_back(ds.samples[i]);
    auto caps2 =
        capture_class_conditional(model, shuffled, probes, {0.0, 1.0}, 16);
    for (size_t p = 0; p < caps1.size(); ++p) {
      for (size_t c = 0; c < caps1[p].class_mean.size(); ++c) {
        for (size_t ch = 0; ch < caps1[p].class_mean[c].size(); ++ch) {
          CHECK(std::abs(caps1[p].class_mean[c][ch] -
                         caps2[p].class_mean[c][ch]) < 1e-12);
        }
      }
    }
  }

  SUBCASE("a class with zero samples is an error") {
    data::Dataset truncated;
    truncated.num_classes = 3;
    for (const auto& s : ds.samples) {
      if (s.label != 2) truncated.samples.push_back(s);
    }
    CHECK_THROWS_AS(
        capture_class_conditional(model, truncated, probes, {0.0, 1.0}),
        DataError);
  }

  SUBCASE("unknown probes are an error") {
    CHECK_THROWS_AS(capture_class_conditional(model, ds, {"nonexistent"},
                                              {0.0, 1.0}),
                    ConfigError);
  }
}

TEST_CASE("constant-output model gives identical class means") {
  // A freshly built model in eval mode on identical images: every class mean
  // must agree because the inputs are the same.
  nn::Model model = nn::build_model(tiny_spec(), 11);
  data::Dataset ds;
  ds.num_classes = 3;
  Rng rng(13);
  Tensor proto = Tensor::randn(Shape{3, 8, 8}, rng);
  for (int i = 0; i < 9; ++i) {
    ds.samples.push_back({proto, i % 3});
  }
  auto caps = capture_class_conditional(
      model, ds, {"stage0.block0.pre_att"}, {0.0, 1.0});
  for (size_t ch = 0; ch < caps[0].class_mean[0].size(); ++ch) {
    CHECK(caps[0].class_mean[1][ch] ==
          doctest::Approx(caps[0].class_mean[0][ch]).epsilon(1e-12));
    CHECK(caps[0].class_mean[2][ch] ==
          doctest::Approx(caps[0].class_mean[0][ch]).epsilon(1e-12));
  }
}

TEST_CASE("two-class constructed probe yields exact class means") {
  // Synthetic activations fed straight to csi: a neuron firing 1.0 on class
  // A and 0.0 on class B.
  CHECK(csi({1.0, 0.0}) == 1.0);
}

TEST_CASE("csi_distribution") {
  SUBCASE("all ones mass the last bin") {
    std::vector<double> v(100, 1.0);
    auto d = csi_distribution(v);
    CHECK(d.hist[63] == 100);
    for (int b = 0; b < 63; ++b) CHECK(d.hist[static_cast<size_t>(b)] == 0);
  }

  SUBCASE("uniform values give a flat histogram") {
    Rng rng(19);
    std::vector<double> v(64000);
    for (double& x : v) x = rng.uniform();
    auto d = csi_distribution(v);
    for (int64_t h : d.hist) {
      CHECK(std::abs(static_cast<double>(h) - 1000.0) < 150.0);
    }
  }

  SUBCASE("skewness matches an independent moment computation") {
    Rng rng(23);
    std::vector<double> v;
    for (int i = 0; i < 5000; ++i) {
      const double u = rng.uniform();
      v.push_back(u * u);  // right-skewed on [0,1]
    }
    auto d = csi_distribution(v);
    // Moment oracle.
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double m2 = 0.0, m3 = 0.0;
    for (double x : v) {
      m2 += (x - m) * (x - m);
      m3 += (x - m) * (x - m) * (x - m);
    }
    m2 /= static_cast<double>(v.size());
    m3 /= static_cast<double>(v.size());
    const double ref = m3 / std::pow(m2, 1.5);
    CHECK(std::abs(d.skewness - ref) < 1e-10);
    CHECK(d.skewness > 0.0);
  }
}

TEST_CASE("attention_stats") {
  data::Dataset ds = tiny_dataset(29);

  SUBCASE("rejects models without attention") {
    nn::Model nf = nn::build_model(tiny_spec(nn::Arch::nf_resnet), 3);
    CHECK_THROWS_AS(attention_stats(nf, ds, {0.0, 1.0}), ConfigError);
  }

  SUBCASE("saturated gates raise the degeneracy flag with means near one") {
    nn::Model m = nn::build_model(tiny_spec(), 31);
    ParamVec state = m.export_state();
    for (auto& e : state) {
      if (e.name.find(".att.fc2.weight") != std::string::npos) {
        std::fill(e.values.begin(), e.values.end(), 0.0);
      }
      if (e.name.find(".att.fc2.bias") != std::string::npos) {
        std::fill(e.values.begin(), e.values.end(), 15.0);
      }
    }
    m.import_state(state);
    auto records = attention_stats(m, ds, {0.0, 1.0});
    REQUIRE(!records.empty());
    for (const auto& r : records) {
      CHECK(r.degenerate);
      for (const auto& row : r.mean_gate) {
        for (double v : row) CHECK(v > 0.999);
      }
    }
  }

  SUBCASE("zero pre-sigmoid gates sit at one half with zero variability") {
    nn::Model m = nn::build_model(tiny_spec(), 37);
    ParamVec state = m.export_state();
    for (auto& e : state) {
      if (e.name.find(".att.") != std::string::npos) {
        std::fill(e.values.begin(), e.values.end(), 0.0);
      }
    }
    m.import_state(state);
    auto records = attention_stats(m, ds, {0.0, 1.0});
    for (const auto& r : records) {
      CHECK(r.degenerate);
      CHECK(r.variability == 0.0);
      for (const auto& row : r.mean_gate) {
        for (double v : row) CHECK(v == 0.5);
      }
    }
  }

  SUBCASE("variability matches an independent statistics pass") {
    nn::Model m = nn::build_model(tiny_spec(), 41);
    auto records = attention_stats(m, ds, {0.0, 1.0});
    for (const auto& r : records) {
      std::vector<double> flat;
      for (const auto& row : r.mean_gate) {
        flat.insert(flat.end(), row.begin(), row.end());
      }
      double mean = 0.0;
      for (double v : flat) mean += v;
      mean /= static_cast<double>(flat.size());
      double var = 0.0;
      for (double v : flat) var += (v - mean) * (v - mean);
      var /= static_cast<double>(flat.size());
      CHECK(std::abs(r.variability - std::sqrt(var)) < 1e-10);
    }
  }

  SUBCASE("the degeneracy flag is monotone in the saturation level") {
    bool was_degenerate = false;
    for (double level : {0.0, 5.0, 15.0}) {
      nn::Model m = nn::build_model(tiny_spec(), 43);
      ParamVec state = m.export_state();
      for (auto& e : state) {
        if (e.name.find(".att.fc2.weight") != std::string::npos) {
          std::fill(e.values.begin(), e.values.end(), 0.0);
        }
        if (e.name.find(".att.fc2.bias") != std::string::npos) {
          std::fill(e.values.begin(), e.values.end(), level);
        }
      }
      m.import_state(state);
      auto records = attention_stats(m, ds, {0.0, 1.0});
      bool all = true;
      for (const auto& r : records) all = all && r.degenerate;
      if (was_degenerate) CHECK(all);
      was_degenerate = all;
    }
  }
}
