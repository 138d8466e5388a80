#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "semiseg/core.hpp"

namespace semiseg {

// Synthetic stand-in for endoscopic frames: smoothly textured background,
// elongated high-contrast "instrument" capsules (class 1), and optional
// bright specular streaks that imitate reflections on tissue (class 0).
struct SceneConfig {
  int height = 64, width = 64;
  int shapes_min = 1, shapes_max = 3;
  double texture_amplitude = 0.25;
  double specular_prob = 0.5;    // probability of background reflection streaks
  double fg_min = 0.03, fg_max = 0.60;  // foreground-fraction bounds (rejection resampled)
  int num_classes = 2;

  void validate() const;
};

template <typename S>
using LabelledItem = std::pair<Tensor<S>, SegMask>;

template <typename S>
struct DatasetSplit {
  std::vector<LabelledItem<S>> labelled;
  std::vector<Tensor<S>> unlabelled;
  double ratio = 1.0;
};

template <typename S>
struct MixedBatch {
  std::vector<LabelledItem<S>> labelled_items;
  std::vector<Tensor<S>> unlabelled_items;
};

template <typename S>
LabelledItem<S> generate_scene(uint64_t seed, const SceneConfig& cfg);

template <typename S>
std::vector<LabelledItem<S>> generate_pool(int count, uint64_t seed, const SceneConfig& cfg);

// floor(ratio * |pool|) items keep their labels (selected by seeded shuffle);
// the rest contribute images only.
template <typename S>
DatasetSplit<S> make_splits(const std::vector<LabelledItem<S>>& pool, double ratio,
                            uint64_t seed);

// Epoch-based sampler: each set is consumed through a fresh seeded shuffle;
// once a set exhausts mid-epoch, further draws are uniform with replacement.
template <typename S>
class BatchSampler {
 public:
  BatchSampler(const DatasetSplit<S>* split, bool use_unlabelled);

  void start_epoch(Rng& rng);
  MixedBatch<S> next(int batch_size, Rng& rng);

  // ceil(max(|labelled|, |unlabelled in use|) / B): the larger set drives the epoch
  int steps_per_epoch(int batch_size) const;

 private:
  const DatasetSplit<S>* split_;
  bool use_unlabelled_;
  std::vector<int> lab_order_, unlab_order_;
  size_t lab_pos_ = 0, unlab_pos_ = 0;
};

// Single-shot convenience form: distinct items first, then uniform with
// replacement once a set is exhausted.
template <typename S>
MixedBatch<S> next_batch(const DatasetSplit<S>& split, int batch_size, Rng& rng);

// Directory layout: images/<stem>.ppm plus optional masks/<stem>.pgm with
// matching stems; an item without a mask is unlabelled.
template <typename S>
void save_directory(const std::filesystem::path& dir,
                    const std::vector<LabelledItem<S>>& items);

template <typename S>
std::vector<std::pair<Tensor<S>, std::optional<SegMask>>> load_directory(
    const std::filesystem::path& dir, int num_classes);

template <typename S>
void write_ppm(const std::filesystem::path& path, const Tensor<S>& image);
template <typename S>
Tensor<S> read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const SegMask& mask);
SegMask read_pgm(const std::filesystem::path& path, int num_classes);

}  // namespace semiseg
