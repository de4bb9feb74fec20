#include "nowcast/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace nowcast {

namespace {

constexpr char kMagic[4] = {'W', '4', 'C', 'K'};
constexpr uint32_t kVersion = 1;
constexpr int64_t kMaxDim = int64_t(1) << 28;

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  io::write_bytes(os, kMagic, 4);
  io::write_pod<uint32_t>(os, kVersion);
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.config_json.size()));
  io::write_bytes(os, ckpt.config_json.data(), ckpt.config_json.size());
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (!t.tensor.defined()) throw std::runtime_error("checkpoint tensor \"" + t.name + "\" is empty");
    io::write_str16(os, t.name);
    const Shape& shape = t.tensor.shape();
    io::write_pod<uint8_t>(os, static_cast<uint8_t>(shape.size()));
    for (int64_t d : shape) io::write_pod<uint32_t>(os, static_cast<uint32_t>(d));
    io::write_bytes(os, t.tensor.data().data(), t.tensor.data().size() * sizeof(float));
  }
  io::write_pod<double>(os, ckpt.best_metric);
  io::write_pod<double>(os, ckpt.lr);
  io::write_pod<uint32_t>(os, ckpt.stale_epochs);
  io::write_pod<uint8_t>(os, ckpt.stopped ? 1 : 0);
  io::write_pod<uint64_t>(os, ckpt.adam_steps);
  io::write_pod<uint32_t>(os, ckpt.epochs_done);
  io::write_pod<double>(os, ckpt.last_metric);
  os.flush();
  if (!os) throw std::runtime_error("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  io::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a checkpoint (bad magic)");
  }
  Checkpoint ck;
  ck.version = io::read_pod<uint32_t>(is, "version");
  if (ck.version != kVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(ck.version));
  }
  const auto config_len = io::read_pod<uint32_t>(is, "config length");
  ck.config_json.resize(config_len);
  io::read_bytes(is, ck.config_json.data(), config_len, "config echo");
  const auto tensor_count = io::read_pod<uint32_t>(is, "tensor count");
  for (uint32_t i = 0; i < tensor_count; ++i) {
    const std::string name = io::read_str16(is, "tensor name");
    const auto rank = io::read_pod<uint8_t>(is, "tensor rank");
    Shape shape;
    int64_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      const auto dim = io::read_pod<uint32_t>(is, "tensor dim");
      shape.push_back(dim);
      numel *= dim;
      if (dim == 0 || numel > kMaxDim) {
        throw std::runtime_error(path + ": implausible shape for tensor \"" + name + "\"");
      }
    }
    auto values = io::read_vec<float>(is, static_cast<size_t>(numel), "tensor data");
    ck.tensors.push_back({name, Tensor::from_data(std::move(shape), std::move(values))});
  }
  ck.best_metric = io::read_pod<double>(is, "best metric");
  ck.lr = io::read_pod<double>(is, "learning rate");
  ck.stale_epochs = io::read_pod<uint32_t>(is, "stale epochs");
  ck.stopped = io::read_pod<uint8_t>(is, "stopped flag") != 0;
  ck.adam_steps = io::read_pod<uint64_t>(is, "optimizer step count");
  ck.epochs_done = io::read_pod<uint32_t>(is, "epoch count");
  ck.last_metric = io::read_pod<double>(is, "last metric");
  is.peek();
  if (!is.eof()) throw std::runtime_error(path + ": trailing bytes after checkpoint payload");
  return ck;
}

bool has_tensor(const Checkpoint& ckpt, const std::string& name) {
  for (const auto& t : ckpt.tensors) {
    if (t.name == name) return true;
  }
  return false;
}

const NamedParam<float>& find_tensor(const Checkpoint& ckpt, const std::string& name) {
  for (const auto& t : ckpt.tensors) {
    if (t.name == name) return t;
  }
  throw std::runtime_error("checkpoint is missing tensor \"" + name + "\"");
}

void apply_weights(EncoderForecaster<float>& model, const Checkpoint& ckpt) {
  for (auto& p : model.named_parameters()) {
    const auto& src = find_tensor(ckpt, p.name);
    if (src.tensor.shape() != p.tensor.shape()) {
      throw std::runtime_error("checkpoint tensor \"" + p.name + "\" has shape " +
                               shape_str(src.tensor.shape()) + ", model expects " +
                               shape_str(p.tensor.shape()));
    }
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), p.tensor.data().begin());
  }
}

}  // namespace nowcast
