#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsm/net.hpp"

namespace tsm::synth {

enum class Motion : std::size_t { Leftward = 0, Rightward = 1 };

struct SyntheticClip {
  Tensor clip;  // (1, T, 1, H, W)
  std::size_t label = 0;
  std::size_t row = 0;
  std::size_t start_col = 0;  // column of the square in frame 0
};

inline constexpr std::size_t kSquareSize = 2;

// A bright square sliding one pixel per frame. Clips 2k and 2k+1 are a
// rightward clip and its exact time reversal (in random order), so both
// classes see the same frames.
std::vector<SyntheticClip> gen_dataset(std::uint64_t seed, std::size_t count, std::size_t frames, std::size_t height,
                                       std::size_t width);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  std::size_t train_size = 512;
  std::size_t test_size = 256;
  std::size_t frames = 8;
  std::size_t height = 16;
  std::size_t width = 16;
  Placement placement = Placement::Residual;

  void validate() const;
};

TrainConfig parse_train_config(const std::string& json_text, const std::string& source = "<memory>");

// Stem 3x3 conv (1->8), two 8->8 blocks with a 1/8-per-direction bidirectional
// shift at the given placement, global pool, linear head with two classes.
NetworkSpec toy_spec(const TrainConfig& cfg);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
};

struct TrainResult {
  WeightStore weights;
  std::vector<EpochMetrics> history;
  double initial_loss = 0;  // mean training loss before the first update
};

struct DataSplit {
  std::vector<SyntheticClip> train;
  std::vector<SyntheticClip> test;
};

// Train and test sets drawn from independent streams derived from cfg.seed.
DataSplit make_split(const TrainConfig& cfg);

// Batches of (N,T,C,H,W) clips and their labels.
Tensor batch_clips(const std::vector<SyntheticClip>& data, std::size_t begin, std::size_t end);

// Plain minibatch SGD on the consensus cross-entropy. The epoch shuffle moves
// clips in aligned blocks of two, keeping gen_dataset's mirrored pairs in the
// same minibatch. Deterministic for a given config and data; throws
// TrainingDiverged on a non-finite loss.
TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const std::vector<SyntheticClip>& train_data,
                  const std::vector<SyntheticClip>& test_data,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

// Fraction of clips whose argmax consensus logit equals the label.
double evaluate(const NetworkSpec& spec, const WeightStore& w, const std::vector<SyntheticClip>& data);

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& history);

}  // namespace tsm::synth
