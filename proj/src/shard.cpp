#include <cstring>
#include <string>

#include "physvid/binary_io.hpp"
#include "physvid/data.hpp"

namespace physvid {
namespace {

constexpr std::uint32_t kMaxDims = 8;

void put_tensor(std::ostream& out, std::initializer_list<int> dims, const std::vector<double>& values) {
  io::put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) io::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : values) io::put_f32(out, static_cast<float>(v));
}

std::vector<double> get_tensor(std::istream& in, std::initializer_list<int> expected, const char* what) {
  const std::uint32_t ndim = io::get_u32(in, what);
  if (ndim > kMaxDims) throw io::FormatError(std::string("implausible rank for ") + what);
  std::vector<std::uint32_t> dims(ndim);
  for (auto& d : dims) d = io::get_u32(in, what);
  bool match = ndim == expected.size();
  std::size_t i = 0;
  for (int e : expected) {
    if (!match) break;
    match = dims[i++] == static_cast<std::uint32_t>(e);
  }
  if (!match) throw io::FormatError(std::string("shape mismatch for ") + what);
  std::size_t count = 1;
  for (auto d : dims) count *= d;
  std::vector<double> values(count);
  for (double& v : values) v = io::get_f32(in, what);
  return values;
}

}  // namespace

ShardWriter::ShardWriter(const std::filesystem::path& path, const ModelConfig& model)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), model_(model) {
  if (!out_) throw std::runtime_error("cannot open shard for writing: " + path.string());
  out_.write(kShardMagic, 4);
  io::put_u32(out_, kShardVersion);
  io::put_u64(out_, fingerprint(model_));
  io::put_u64(out_, 0);
}

ShardWriter::~ShardWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void ShardWriter::append(const TrainingSample& s) {
  if (closed_) throw std::logic_error("append to a closed shard");
  if (!s.z0.matches(model_) || s.c_text.length != model_.text_len || s.c_text.width != model_.text_dim ||
      s.p_gt.length != model_.phys_tokens || s.p_gt.width != model_.phys_dim)
    throw std::invalid_argument(s.sample_id + ": sample shapes do not match the shard config");
  io::put_string(out_, s.sample_id);
  put_tensor(out_, {s.z0.channels, s.z0.frames, s.z0.height, s.z0.width}, s.z0.data);
  put_tensor(out_, {s.c_text.length, s.c_text.width}, s.c_text.data);
  put_tensor(out_, {s.p_gt.length, s.p_gt.width}, s.p_gt.data);
  io::put_string(out_, s.prompt);
  if (!out_) throw std::runtime_error("write failed: " + path_.string());
  ++count_;
}

std::uint64_t ShardWriter::close() {
  if (closed_) return count_;
  closed_ = true;
  out_.seekp(4 + 4 + 8);
  io::put_u64(out_, count_);
  out_.close();
  if (!out_) throw std::runtime_error("failed to finalize shard: " + path_.string());
  return count_;
}

ShardReader::ShardReader(const std::filesystem::path& path, const ModelConfig& model)
    : in_(path, std::ios::binary), model_(model) {
  if (!in_) throw std::runtime_error("cannot open shard: " + path.string());
  char magic[4] = {};
  in_.read(magic, 4);
  if (in_.gcount() != 4) throw io::TruncatedError("truncated file while reading shard magic");
  if (std::memcmp(magic, kShardMagic, 4) != 0) throw io::FormatError("bad shard magic (expected PVGC)");
  const std::uint32_t version = io::get_u32(in_, "shard version");
  if (version != kShardVersion)
    throw io::FormatError("shard version mismatch: file has " + std::to_string(version) + ", reader supports " +
                          std::to_string(kShardVersion));
  const std::uint64_t fp = io::get_u64(in_, "shard fingerprint");
  if (fp != fingerprint(model_))
    throw io::FormatError("shard fingerprint mismatch: the shard was written under a different model config");
  count_ = io::get_u64(in_, "shard sample count");
}

std::optional<TrainingSample> ShardReader::next() {
  if (read_ >= count_) return std::nullopt;
  TrainingSample s;
  s.sample_id = io::get_string(in_, "sample id");
  s.z0 = LatentVideo::zeros(model_);
  s.z0.data = get_tensor(in_, {model_.latent_channels, model_.latent_frames, model_.latent_height, model_.latent_width},
                         "z0");
  s.c_text = TextEmbedding::zeros(model_.text_len, model_.text_dim);
  s.c_text.data = get_tensor(in_, {model_.text_len, model_.text_dim}, "c_text");
  s.p_gt = PhysicsTokens::zeros(model_.phys_tokens, model_.phys_dim);
  s.p_gt.data = get_tensor(in_, {model_.phys_tokens, model_.phys_dim}, "p_gt");
  s.prompt = io::get_string(in_, "prompt");
  ++read_;
  return s;
}

std::uint64_t write_shard(std::span<const TrainingSample> samples, const std::filesystem::path& path,
                          const ModelConfig& model) {
  ShardWriter writer(path, model);
  for (const TrainingSample& s : samples) writer.append(s);
  return writer.close();
}

std::uint64_t write_shard(SampleStream& stream, const std::filesystem::path& path, const ModelConfig& model) {
  ShardWriter writer(path, model);
  while (auto s = stream.next()) writer.append(*s);
  return writer.close();
}

std::vector<TrainingSample> read_shard(const std::filesystem::path& path, const ModelConfig& model) {
  ShardReader reader(path, model);
  std::vector<TrainingSample> out;
  while (auto s = reader.next()) out.push_back(std::move(*s));
  return out;
}

}  // namespace physvid
