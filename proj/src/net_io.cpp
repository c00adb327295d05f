#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "byte_stream.hpp"
#include "tsm/net.hpp"

namespace tsm {

namespace {

constexpr char kWeightMagic[4] = {'T', 'S', 'M', 'W'};
constexpr std::uint8_t kWeightVersion = 1;

AxisLabels labels_for_rank(std::size_t rank) {
  switch (rank) {
    case 1: return kVectorAxes;
    case 2: return kMatrixAxes;
    case 3: return {Axis::C, Axis::H, Axis::W};
    case 4: return kFrameAxes;
    case 5: return kActivationAxes;
    default: return {};
  }
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const WeightStore& w) {
  detail::ByteWriter out;
  out.bytes(kWeightMagic, 4);
  out.u8(kWeightVersion);
  out.u32(static_cast<std::uint32_t>(w.size()));
  for (const auto& [name, t] : w) {
    if (name.size() > 0xFFFF) throw InvalidSpec("weight name too long: " + name.substr(0, 32) + "...");
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.bytes(name.data(), name.size());
    out.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.extents()) out.u64(e);
    for (float f : t.data()) out.f32(f);
  }
  return out.take();
}

WeightStore decode_weights(std::span<const std::uint8_t> bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kWeightMagic, 4) != 0) r.fail("bad magic (expected \"TSMW\")");
  if (const auto v = r.u8(); v != kWeightVersion) r.fail("unsupported version " + std::to_string(v));
  const std::uint32_t count = r.u32();
  WeightStore w;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    const auto raw = r.bytes(len);
    std::string name(raw.begin(), raw.end());
    const std::size_t rank = r.u8();
    if (rank == 0 || rank > 5) r.fail("unsupported rank " + std::to_string(rank) + " for '" + name + "'");
    Extents extents;
    std::uint64_t elems = 1;
    for (std::size_t a = 0; a < rank; ++a) {
      const auto e = r.u64();
      if (e == 0) r.fail("zero extent in '" + name + "'");
      if (e > r.remaining() || elems > r.remaining() / e) r.fail("extents of '" + name + "' exceed file size");
      elems *= e;
      extents.push_back(static_cast<std::size_t>(e));
    }
    std::vector<float> data(static_cast<std::size_t>(elems));
    r.f32_array(data);
    if (w.count(name)) r.fail("duplicate weight '" + name + "'");
    w.emplace(std::move(name), Tensor::from_data(std::move(extents), labels_for_rank(rank), std::move(data)));
  }
  if (!r.at_end()) r.fail("trailing bytes after last weight");
  return w;
}

void save_weights(const WeightStore& w, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_weights(w));
}

WeightStore load_weights(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return decode_weights(bytes, path.string());
}

namespace {

using nlohmann::json;

class SpecReader {
 public:
  explicit SpecReader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& where, const std::string& what) const {
    throw FormatError(source_ + ": " + where + ": " + what);
  }

  const json& object(const json& j, const std::string& where, std::initializer_list<const char*> allowed) const {
    if (!j.is_object()) fail(where, "expected an object");
    for (const auto& [key, value] : j.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) fail(where, "unknown key \"" + key + "\"");
    }
    return j;
  }

  std::size_t count(const json& j, const char* key, const std::string& where,
                    std::optional<std::size_t> fallback = std::nullopt) const {
    if (!j.contains(key)) {
      if (fallback) return *fallback;
      fail(where, std::string("missing key \"") + key + "\"");
    }
    const auto& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(where + "." + key, "expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  std::string text(const json& j, const char* key, const std::string& where, const char* fallback = nullptr) const {
    if (!j.contains(key)) {
      if (fallback) return fallback;
      fail(where, std::string("missing key \"") + key + "\"");
    }
    if (!j.at(key).is_string()) fail(where + "." + key, "expected a string");
    return j.at(key).get<std::string>();
  }

  ConvDesc conv(const json& j, const std::string& where, std::size_t in_channels) const {
    object(j, where, {"in", "out", "kernel", "stride", "padding"});
    ConvDesc d;
    d.in_channels = count(j, "in", where, in_channels);
    d.out_channels = count(j, "out", where);
    d.kernel = count(j, "kernel", where, 3);
    d.stride = count(j, "stride", where, 1);
    d.padding = count(j, "padding", where, d.kernel / 2);
    return d;
  }

  ShiftSpec shift(const json& j, const std::string& where) const {
    object(j, where, {"n_fwd", "n_bwd", "padding", "mode"});
    ShiftSpec s;
    s.n_fwd = count(j, "n_fwd", where, 0);
    s.n_bwd = count(j, "n_bwd", where, 0);
    const auto pad = text(j, "padding", where, "zero");
    if (pad == "zero") {
      s.padding = Padding::Zero;
    } else if (pad == "circular") {
      s.padding = Padding::Circular;
    } else {
      fail(where + ".padding", "expected \"zero\" or \"circular\"");
    }
    const auto mode = text(j, "mode", where, "bi");
    if (mode == "bi") {
      s.mode = ShiftMode::Bidirectional;
    } else if (mode == "uni") {
      s.mode = ShiftMode::Unidirectional;
    } else {
      fail(where + ".mode", "expected \"bi\" or \"uni\"");
    }
    return s;
  }

 private:
  std::string source_;
};

json conv_json(const ConvDesc& d) {
  return {{"in", d.in_channels}, {"out", d.out_channels}, {"kernel", d.kernel}, {"stride", d.stride},
          {"padding", d.padding}};
}

}  // namespace

NetworkSpec parse_spec(const std::string& json_text, const std::string& source) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(source + ": invalid JSON at byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
  const SpecReader rd(source);
  rd.object(root, "spec", {"input", "stem", "blocks", "head"});
  for (const char* key : {"input", "stem", "head"}) {
    if (!root.contains(key)) rd.fail("spec", std::string("missing key \"") + key + "\"");
  }

  NetworkSpec spec;
  const auto& in = rd.object(root.at("input"), "input", {"c", "h", "w", "t"});
  spec.input = {rd.count(in, "c", "input"), rd.count(in, "h", "input"), rd.count(in, "w", "input")};
  spec.frames = rd.count(in, "t", "input", 1);
  spec.stem = rd.conv(root.at("stem"), "stem", spec.input.c);

  std::size_t channels = spec.stem.out_channels;
  if (root.contains("blocks")) {
    const auto& blocks = root.at("blocks");
    if (!blocks.is_array()) rd.fail("blocks", "expected an array");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string where = "blocks[" + std::to_string(i) + "]";
      const auto& bj = rd.object(blocks[i], where, {"conv1", "conv2", "placement", "shift", "downsample"});
      if (!bj.contains("conv1") || !bj.contains("conv2")) rd.fail(where, "conv1 and conv2 are required");
      BlockSpec b;
      b.conv1 = rd.conv(bj.at("conv1"), where + ".conv1", channels);
      b.conv2 = rd.conv(bj.at("conv2"), where + ".conv2", b.conv1.out_channels);
      const auto placement = rd.text(bj, "placement", where, "none");
      if (placement == "none") {
        b.placement = Placement::None;
      } else if (placement == "inplace") {
        b.placement = Placement::InPlace;
      } else if (placement == "residual") {
        b.placement = Placement::Residual;
      } else {
        rd.fail(where + ".placement", "expected \"none\", \"inplace\" or \"residual\"");
      }
      if (bj.contains("shift")) b.shift = rd.shift(bj.at("shift"), where + ".shift");
      if (bj.contains("downsample") && !bj.at("downsample").is_null()) {
        b.downsample = rd.conv(bj.at("downsample"), where + ".downsample", channels);
        if (!bj.at("downsample").contains("kernel")) {
          b.downsample->kernel = 1;
          b.downsample->padding = bj.at("downsample").value("padding", std::size_t{0});
        }
      }
      channels = b.conv2.out_channels;
      spec.blocks.push_back(b);
    }
  }
  const auto& head = rd.object(root.at("head"), "head", {"classes"});
  spec.num_classes = rd.count(head, "classes", "head");
  spec.validate();
  return spec;
}

std::string spec_to_json(const NetworkSpec& spec) {
  json root;
  root["input"] = {{"c", spec.input.c}, {"h", spec.input.h}, {"w", spec.input.w}, {"t", spec.frames}};
  root["stem"] = conv_json(spec.stem);
  root["blocks"] = json::array();
  for (const auto& b : spec.blocks) {
    json bj{{"conv1", conv_json(b.conv1)},
            {"conv2", conv_json(b.conv2)},
            {"placement", to_string(b.placement)},
            {"shift",
             {{"n_fwd", b.shift.n_fwd},
              {"n_bwd", b.shift.n_bwd},
              {"padding", to_string(b.shift.padding)},
              {"mode", to_string(b.shift.mode)}}}};
    if (b.downsample) bj["downsample"] = conv_json(*b.downsample);
    root["blocks"].push_back(std::move(bj));
  }
  root["head"] = {{"classes", spec.num_classes}};
  return root.dump(2) + "\n";
}

NetworkSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str(), path.string());
}

void save_spec(const NetworkSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << spec_to_json(spec);
}

}  // namespace tsm
