#include <cstring>
#include <fstream>
#include <sstream>

#include "physvid/binary_io.hpp"
#include "physvid/training.hpp"

namespace physvid {
namespace {

// magic, version, fingerprint, total length
constexpr std::uint64_t kHeaderBytes = 4 + 4 + 8 + 8;

struct Header {
  std::uint64_t fingerprint = 0;
  std::uint64_t length = 0;
};

Header read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4) throw io::TruncatedError("truncated checkpoint (no header): " + path.string());
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw io::FormatError("bad checkpoint magic (expected PVGK): " + path.string());
  const std::uint32_t version = io::get_u32(in, "checkpoint version");
  if (version != kCheckpointVersion)
    throw io::FormatError("checkpoint version mismatch: file has " + std::to_string(version) + ", reader supports " +
                          std::to_string(kCheckpointVersion));
  Header h;
  h.fingerprint = io::get_u64(in, "checkpoint fingerprint");
  h.length = io::get_u64(in, "checkpoint length");
  const auto actual = std::filesystem::file_size(path);
  if (actual != h.length)
    throw io::TruncatedError("checkpoint length mismatch: header records " + std::to_string(h.length) +
                             " bytes, file has " + std::to_string(actual) + " (truncated or tampered)");
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelStates& states, const AdamW& optimizer, int step,
                     const Rng& rng) {
  std::ostringstream body(std::ios::binary);
  io::put_u64(body, static_cast<std::uint64_t>(step));
  io::put_string(body, to_json(states.config));
  io::put_string(body, to_string(states.freeze));
  io::put_string(body, rng.serialize());
  const nn::ParameterList params = states.parameters();
  io::put_u32(body, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::put_string(body, p.name);
    io::put_u32(body, static_cast<std::uint32_t>(p.tensor.rows()));
    io::put_u32(body, static_cast<std::uint32_t>(p.tensor.cols()));
    for (double v : p.tensor.values()) io::put_f64(body, v);
  }
  io::put_u64(body, static_cast<std::uint64_t>(optimizer.step_count()));
  io::put_u32(body, static_cast<std::uint32_t>(optimizer.moments().size()));
  for (const auto& [name, mom] : optimizer.moments()) {
    io::put_string(body, name);
    io::put_u32(body, static_cast<std::uint32_t>(mom.m.size()));
    for (double v : mom.m) io::put_f64(body, v);
    for (double v : mom.v) io::put_f64(body, v);
  }
  const std::string payload = std::move(body).str();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp.string());
    out.write(kCheckpointMagic, 4);
    io::put_u32(out, kCheckpointVersion);
    io::put_u64(out, fingerprint(states.config.model));
    io::put_u64(out, kHeaderBytes + payload.size());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.close();
    if (!out) throw std::runtime_error("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Config checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  read_header(in, path);
  io::get_u64(in, "step");
  return parse_config(io::get_string(in, "config"));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  const Header header = read_header(in, path);
  if (header.fingerprint != fingerprint(expected))
    throw io::FormatError("checkpoint fingerprint mismatch: saved under model config " +
                          std::to_string(header.fingerprint) + ", expected " + fingerprint_hex(expected));
  Checkpoint c;
  c.step = static_cast<int>(io::get_u64(in, "step"));
  c.config_json = io::get_string(in, "config");
  c.freeze = parse_freeze_policy(io::get_string(in, "freeze policy"));
  c.rng_state = io::get_string(in, "rng state");
  const std::uint32_t n = io::get_u32(in, "parameter count");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = io::get_string(in, "parameter name");
    CheckpointTensor t;
    t.rows = static_cast<int>(io::get_u32(in, "rows"));
    t.cols = static_cast<int>(io::get_u32(in, "cols"));
    const std::uint64_t count = static_cast<std::uint64_t>(t.rows) * static_cast<std::uint64_t>(t.cols);
    if (count * 8 > header.length) throw io::FormatError("implausible tensor size for " + name);
    t.values.resize(count);
    for (double& v : t.values) v = io::get_f64(in, "parameter values");
    c.parameters.emplace(std::move(name), std::move(t));
  }
  c.optimizer_steps = static_cast<std::int64_t>(io::get_u64(in, "optimizer step"));
  const std::uint32_t moments = io::get_u32(in, "moment count");
  for (std::uint32_t i = 0; i < moments; ++i) {
    std::string name = io::get_string(in, "moment name");
    const std::uint32_t size = io::get_u32(in, "moment size");
    if (static_cast<std::uint64_t>(size) * 16 > header.length) throw io::FormatError("implausible moment size");
    AdamW::Moments mom;
    mom.m.resize(size);
    mom.v.resize(size);
    for (double& v : mom.m) v = io::get_f64(in, "first moment");
    for (double& v : mom.v) v = io::get_f64(in, "second moment");
    c.moments.emplace(std::move(name), std::move(mom));
  }
  return c;
}

void restore_parameters(const Checkpoint& checkpoint, ModelStates& states) {
  const nn::ParameterList params = states.parameters();
  if (params.size() != checkpoint.parameters.size())
    throw io::FormatError("checkpoint holds " + std::to_string(checkpoint.parameters.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  for (const auto& p : params) {
    auto it = checkpoint.parameters.find(p.name);
    if (it == checkpoint.parameters.end()) throw io::FormatError("checkpoint lacks parameter " + p.name);
    if (it->second.rows != p.tensor.rows() || it->second.cols != p.tensor.cols())
      throw io::FormatError("checkpoint shape mismatch for " + p.name);
    ag::Tensor t = p.tensor;
    std::copy(it->second.values.begin(), it->second.values.end(), t.mutable_values().begin());
  }
}

void restore_optimizer(const Checkpoint& checkpoint, AdamW& optimizer) {
  optimizer.moments() = checkpoint.moments;
  optimizer.set_step_count(checkpoint.optimizer_steps);
}

}  // namespace physvid
