#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim::data {

struct Sample {
  Tensor image;  // [C,H,W]
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;
  uint64_t seed = 0;

  std::vector<int> labels() const;
  // Scalar mean/std over every pixel; used for input normalization.
  std::pair<double, double> scalar_stats() const;
};

struct ClientShard {
  int client_id = 0;
  std::vector<int64_t> indices;          // sorted, unique
  std::vector<int64_t> label_histogram;  // [num_classes]
  int64_t size() const { return static_cast<int64_t>(indices.size()); }
};

enum class Scheme { colorshift, dirichlet, k_classes, quantity_skew };

std::string scheme_name(Scheme s);
Scheme parse_scheme(const std::string& name);

struct PartitionConfig {
  Scheme scheme = Scheme::colorshift;
  double alpha = 0.5;           // dirichlet
  int k = 2;                    // k_classes
  double skew_exponent = 1.7;   // quantity_skew
  double shift_strength = 0.9;  // colorshift
  uint64_t seed = 0;
  bool operator==(const PartitionConfig&) const = default;
};

// Synthetic feature-shift task: the class determines a foreground shape
// (the consistent feature), the client determines the background color
// distribution (the inconsistent feature). shift_strength 0 gives identical
// background distributions on every client; 1 gives fully client-specific
// palettes.
std::pair<Dataset, std::vector<ClientShard>> gen_colorshift(
    int num_clients, int num_classes, int samples_per_client,
    double shift_strength, int image_size, uint64_t seed);

// Per-class Dirichlet(alpha) proportions, largest-remainder rounding, and a
// full redraw whenever a client would end up empty (at most 100 retries).
std::vector<ClientShard> partition_dirichlet(const std::vector<int>& labels,
                                             int num_clients, double alpha,
                                             uint64_t seed);

// Each client sees exactly k classes; class-to-client assignment is
// round-robin over a seeded shuffle and each class's samples are split
// equally among its owners.
std::vector<ClientShard> partition_k_classes(const std::vector<int>& labels,
                                             int num_clients, int k,
                                             uint64_t seed);

// Shard sizes proportional to rank^(-skew_exponent); labels are spread by a
// seeded global shuffle so each shard stays close to the global mixture.
std::vector<ClientShard> partition_quantity_skew(const std::vector<int>& labels,
                                                 int num_clients,
                                                 double skew_exponent,
                                                 uint64_t seed);

struct PartitionReport {
  std::vector<std::vector<int64_t>> histograms;  // [client][class]
  std::vector<double> size_fractions;            // |D_i| / |D|
  std::vector<std::vector<double>> tv_distance;  // pairwise total variation
};

PartitionReport partition_stats(const std::vector<ClientShard>& shards,
                                const std::vector<int>& labels,
                                int num_classes);

// Plain-text export: one line per client, "client_id: idx idx idx ...".
std::string shard_index_text(const std::vector<ClientShard>& shards);

// Colorshift internals exposed for oracle classifiers and audits.
int colorshift_palette_size(int num_clients);
std::array<double, 3> colorshift_palette_color(int num_clients, int index);
// Foreground mask of a class on an image_size x image_size canvas. Each
// generated sample draws the mask at a random offset within
// +/- colorshift_jitter(image_size) pixels per axis; the borders stay pure
// background at every offset.
std::vector<bool> colorshift_shape_mask(int class_id, int image_size);
int colorshift_jitter(int image_size);
// True where the interior background stripe texture darkens the base color.
bool colorshift_stripe_at(int r, int c, int image_size);

// Recovers the background palette index from a generated image's corner.
int colorshift_background_index(const Tensor& image, int num_clients);

}  // namespace fedsim::data
