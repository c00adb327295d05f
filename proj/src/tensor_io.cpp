#include "tsm/tensor_io.hpp"

#include <algorithm>
#include <fstream>

#include "byte_stream.hpp"

namespace tsm {
namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to " + path.string() + " failed");
}

}  // namespace detail

namespace {
constexpr char kMagic[4] = {'T', 'S', 'M', 'T'};
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u8(kTensorFormatVersion);
  if (t.rank() > 255) throw InvalidShape("rank above 255 cannot be encoded");
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (Axis a : t.labels()) w.u8(static_cast<std::uint8_t>(a));
  for (std::size_t e : t.extents()) w.u64(e);
  for (float f : t.data()) w.f32(f);
  return w.take();
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    r.fail("bad magic (expected \"TSMT\")");
  }
  if (const auto version = r.u8(); version != kTensorFormatVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  const std::size_t rank = r.u8();
  AxisLabels labels;
  for (std::size_t i = 0; i < rank; ++i) {
    const auto code = r.u8();
    if (code > static_cast<std::uint8_t>(Axis::W)) r.fail("unknown axis code " + std::to_string(code));
    if (std::find(labels.begin(), labels.end(), static_cast<Axis>(code)) != labels.end()) {
      r.fail("axis code " + std::to_string(code) + " appears twice");
    }
    labels.push_back(static_cast<Axis>(code));
  }
  Extents extents;
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const auto e = r.u64();
    if (e == 0) r.fail("zero extent");
    // Bound by the bytes actually present before multiplying further.
    if (e > r.remaining() || count > r.remaining() / e) r.fail("extents exceed file size");
    count *= e;
    extents.push_back(static_cast<std::size_t>(e));
  }
  if (r.remaining() != count * 4) {
    if (r.remaining() < count * 4) r.need(count * 4);
    r.fail("trailing bytes after tensor data");
  }
  std::vector<float> data(count);
  r.f32_array(data);
  return Tensor::from_data(std::move(extents), std::move(labels), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  detail::write_file_bytes(path, encode_tensor(t));
}

Tensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return decode_tensor(bytes, path.string());
}

}  // namespace tsm
