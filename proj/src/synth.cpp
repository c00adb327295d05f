#include "tsm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "json.hpp"

namespace tsm::synth {

std::vector<SyntheticClip> gen_dataset(std::uint64_t seed, std::size_t count, std::size_t frames, std::size_t height,
                                       std::size_t width) {
  if (frames < 2) throw InvalidSpec("the direction task needs at least 2 frames");
  if (height < kSquareSize + frames || width < kSquareSize + frames) {
    throw InvalidSpec("a " + std::to_string(kSquareSize) + "x" + std::to_string(kSquareSize) + " square moving for " +
                      std::to_string(frames) + " frames needs H, W >= " + std::to_string(kSquareSize + frames));
  }
  if (count % 2 != 0) throw InvalidSpec("clip count must be even so both directions are balanced");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> row_dist(0, height - kSquareSize);
  std::uniform_int_distribution<std::size_t> col_dist(0, width - kSquareSize - (frames - 1));

  // Every frame is standardized to zero mean and unit variance.
  const double p = static_cast<double>(kSquareSize * kSquareSize) / static_cast<double>(height * width);
  const auto bright = static_cast<float>(std::sqrt((1.0 - p) / p));
  const auto dark = static_cast<float>(-std::sqrt(p / (1.0 - p)));

  std::bernoulli_distribution flip(0.5);
  std::vector<SyntheticClip> clips;
  clips.reserve(count);
  for (std::size_t pair = 0; pair < count / 2; ++pair) {
    const std::size_t row = row_dist(rng);
    const std::size_t col = col_dist(rng);
    auto clip = make_activation<float>({1, frames, 1, height, width});
    std::fill(clip.data().begin(), clip.data().end(), dark);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t dy = 0; dy < kSquareSize; ++dy) {
        for (std::size_t dx = 0; dx < kSquareSize; ++dx) clip.at({0, t, 0, row + dy, col + t + dx}) = bright;
      }
    }
    auto reversed = reverse_time(clip);
    SyntheticClip right{std::move(clip), static_cast<std::size_t>(Motion::Rightward), row, col};
    SyntheticClip left{std::move(reversed), static_cast<std::size_t>(Motion::Leftward), row, col + frames - 1};
    if (flip(rng)) std::swap(right, left);
    clips.push_back(std::move(right));
    clips.push_back(std::move(left));
  }
  return clips;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidSpec("learning rate must be >= 0");
  if (batch_size == 0 || epochs == 0 || train_size == 0 || test_size == 0) {
    throw InvalidSpec("batch size, epochs and dataset sizes must be positive");
  }
}

TrainConfig parse_train_config(const std::string& json_text, const std::string& source) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(source + ": invalid JSON at byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError(source + ": expected an object");
  TrainConfig cfg;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "learning_rate") {
        cfg.learning_rate = v.get<double>();
      } else if (key == "batch_size") {
        cfg.batch_size = v.get<std::size_t>();
      } else if (key == "epochs") {
        cfg.epochs = v.get<std::size_t>();
      } else if (key == "seed") {
        cfg.seed = v.get<std::uint64_t>();
      } else if (key == "train_size") {
        cfg.train_size = v.get<std::size_t>();
      } else if (key == "test_size") {
        cfg.test_size = v.get<std::size_t>();
      } else if (key == "frames") {
        cfg.frames = v.get<std::size_t>();
      } else if (key == "height") {
        cfg.height = v.get<std::size_t>();
      } else if (key == "width") {
        cfg.width = v.get<std::size_t>();
      } else if (key == "placement") {
        const auto p = v.get<std::string>();
        if (p == "none") {
          cfg.placement = Placement::None;
        } else if (p == "inplace") {
          cfg.placement = Placement::InPlace;
        } else if (p == "residual") {
          cfg.placement = Placement::Residual;
        } else {
          throw FormatError(source + ": placement must be none, inplace or residual");
        }
      } else {
        throw FormatError(source + ": unknown key \"" + key + "\"");
      }
    }
  } catch (const json::type_error& e) {
    throw FormatError(source + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

NetworkSpec toy_spec(const TrainConfig& cfg) {
  constexpr std::size_t kWidth = 8;
  NetworkSpec spec;
  spec.input = {1, cfg.height, cfg.width};
  spec.frames = cfg.frames;
  spec.stem = {1, kWidth, 3, 1, 1};
  for (int i = 0; i < 2; ++i) {
    BlockSpec b;
    b.conv1 = {kWidth, kWidth, 3, 1, 1};
    b.conv2 = {kWidth, kWidth, 3, 1, 1};
    b.placement = cfg.placement;
    b.shift = ShiftSpec::per_direction(kWidth);
    spec.blocks.push_back(b);
  }
  spec.num_classes = 2;
  spec.validate();
  return spec;
}

DataSplit make_split(const TrainConfig& cfg) {
  cfg.validate();
  return {gen_dataset(cfg.seed * 2 + 1, cfg.train_size, cfg.frames, cfg.height, cfg.width),
          gen_dataset(cfg.seed * 2 + 2, cfg.test_size, cfg.frames, cfg.height, cfg.width)};
}

Tensor batch_clips(const std::vector<SyntheticClip>& data, std::size_t begin, std::size_t end) {
  if (begin >= end || end > data.size()) throw IndexError("empty or out-of-range clip batch");
  const auto s = activation_shape(data[begin].clip);
  auto out = make_activation<float>({end - begin, s.t, s.c, s.h, s.w});
  const std::size_t clip_size = s.t * s.frame_size();
  for (std::size_t i = begin; i < end; ++i) {
    if (activation_shape(data[i].clip) != s) throw InvalidShape("clips in a batch must share one shape");
    std::copy(data[i].clip.data().begin(), data[i].clip.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>((i - begin) * clip_size));
  }
  return out;
}

namespace {

constexpr std::size_t kEvalChunk = 32;

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double mean_loss(const NetworkSpec& spec, const WeightStore& w, const std::vector<SyntheticClip>& data) {
  double total = 0.0;
  for (std::size_t b = 0; b < data.size(); b += kEvalChunk) {
    const std::size_t e = std::min(data.size(), b + kEvalChunk);
    const auto consensus = consensus_average(forward_offline(batch_clips(data, b, e), spec, w));
    for (std::size_t i = b; i < e; ++i) {
      const auto k = spec.num_classes;
      total += softmax_cross_entropy<float>(consensus.data().subspan((i - b) * k, k), data[i].label).loss;
    }
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

double evaluate(const NetworkSpec& spec, const WeightStore& w, const std::vector<SyntheticClip>& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  const std::size_t k = spec.num_classes;
  for (std::size_t b = 0; b < data.size(); b += kEvalChunk) {
    const std::size_t e = std::min(data.size(), b + kEvalChunk);
    const auto consensus = consensus_average(forward_offline(batch_clips(data, b, e), spec, w));
    for (std::size_t i = b; i < e; ++i) {
      correct += argmax(consensus.data().subspan((i - b) * k, k)) == data[i].label ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const std::vector<SyntheticClip>& train_data,
                  const std::vector<SyntheticClip>& test_data,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  spec.validate();
  if (spec.num_classes != 2) throw InvalidSpec("the direction task has exactly 2 classes");
  if (train_data.empty()) throw InvalidSpec("training data is empty");

  TrainResult result;
  result.weights = init_weights(spec, cfg.seed);
  result.initial_loss = mean_loss(spec, result.weights, train_data);

  std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dull);
  // Shuffled in aligned blocks of two so a clip and its mirror stay in one batch.
  std::vector<std::size_t> order((train_data.size() + 1) / 2);
  std::vector<SyntheticClip> epoch_data;
  const float lr = static_cast<float>(cfg.learning_rate);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    epoch_data.clear();
    for (std::size_t blk : order) {
      for (std::size_t i = 2 * blk; i < std::min(train_data.size(), 2 * blk + 2); ++i) epoch_data.push_back(train_data[i]);
    }

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < epoch_data.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(epoch_data.size(), b + cfg.batch_size);
      std::vector<std::size_t> labels;
      for (std::size_t i = b; i < e; ++i) labels.push_back(epoch_data[i].label);
      auto lg = loss_and_gradients<float>(batch_clips(epoch_data, b, e), labels, spec, result.weights);
      if (!std::isfinite(lg.loss)) {
        throw TrainingDiverged("loss became " + std::to_string(lg.loss) + " in epoch " + std::to_string(epoch));
      }
      loss_sum += lg.loss * static_cast<double>(e - b);
      for (std::size_t i = b; i < e; ++i) {
        correct += argmax(lg.consensus.data().subspan((i - b) * 2, 2)) == labels[i - b] ? 1 : 0;
      }
      for (auto& [name, t] : result.weights) {
        const auto& g = lg.grads.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * g[i];
      }
    }
    EpochMetrics m{epoch, loss_sum / static_cast<double>(epoch_data.size()),
                   static_cast<double>(correct) / static_cast<double>(epoch_data.size()),
                   evaluate(spec, result.weights, test_data)};
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& history) {
  out << "epoch,train_loss,train_acc,test_acc\n";
  for (const auto& m : history) {
    out << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.test_acc << '\n';
  }
}

}  // namespace tsm::synth
