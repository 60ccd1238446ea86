/*
 * Copyright 2026 The nerve Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "nerve/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

#include "nerve/error.hpp"

namespace nerve {

namespace {

constexpr const char* kMomentPrefix1 = "adamw.m/";
constexpr const char* kMomentPrefix2 = "adamw.v/";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const nn::Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
    bytes(t.data(), t.size() * sizeof(double));
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  void bytes(void* out, std::size_t n) {
    if (n > size_ - pos_) throw CorruptFileError("checkpoint is truncated");
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > size_ - pos_) throw CorruptFileError("checkpoint is truncated");
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, nn::Tensor> tensor() {
    std::string name = str();
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) throw CorruptFileError("bad tensor rank in checkpoint");
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = u32();
      if (d == 0) throw CorruptFileError("bad tensor shape in checkpoint");
      count *= d;
    }
    if (count > (size_ - pos_) / sizeof(double)) throw CorruptFileError("checkpoint is truncated");
    nn::Tensor t(shape);
    bytes(t.data(), count * sizeof(double));
    return {std::move(name), std::move(t)};
  }
  bool done() const { return pos_ == size_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

void save_checkpoint(const MAEModel& model, const std::filesystem::path& path, const TrainState* state) {
  KeyValueConfig kv;
  kv.merge(model.config().to_config(), "model");
  kv.set("parcellation.assignment", join(model.parcellation().assignment()));
  kv.set("train.has_optimizer", state != nullptr);
  if (state) {
    kv.set("train.epochs_done", state->epochs_done);
    kv.set("train.steps_done", state->steps_done);
    kv.set("train.optimizer_step", state->optimizer.step);
    kv.set("train.beta1", state->optimizer.hyper.beta1);
    kv.set("train.beta2", state->optimizer.hyper.beta2);
    kv.set("train.eps", state->optimizer.hyper.eps);
    kv.set("train.weight_decay", state->optimizer.hyper.weight_decay);
  }

  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(kv.to_text());
  const auto& entries = model.params().entries();
  const std::size_t count = entries.size() * (state ? 3 : 1);
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& e : entries) w.tensor(e.name, e.param->value);
  if (state) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      w.tensor(kMomentPrefix1 + entries[i].name, state->optimizer.first.at(i));
      w.tensor(kMomentPrefix2 + entries[i].name, state->optimizer.second.at(i));
    }
  }
  const std::uint32_t sum = crc(w.buffer().data(), w.buffer().size());
  w.u32(sum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kCheckpointMagic + 4 + 4) throw CorruptFileError("checkpoint is truncated");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CorruptFileError(path.string() + " is not a checkpoint (bad magic)");
  const std::size_t body = buf.size() - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, buf.data() + body, 4);
  if (stored != crc(buf.data(), body)) throw CorruptFileError("checkpoint checksum mismatch (truncated or corrupt)");

  Reader r(buf.data(), body);
  char magic[sizeof kCheckpointMagic];
  r.bytes(magic, sizeof magic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const KeyValueConfig kv = KeyValueConfig::parse(r.str(), "checkpoint");
  MAEConfig config = MAEConfig::from_config(kv.section("model"));
  std::vector<int> assignment = kv.get_int_list("parcellation.assignment");
  MAEModel model(config, Parcellation(std::move(assignment)));

  const std::uint32_t count = r.u32();
  std::map<std::string, nn::Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw CorruptFileError("trailing bytes in checkpoint");

  auto take = [&](const std::string& name, const nn::Tensor& like) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CorruptFileError("checkpoint is missing tensor " + name);
    if (!it->second.same_shape(like))
      throw CorruptFileError("checkpoint tensor " + name + " has shape " + it->second.shape_string() +
                             ", expected " + like.shape_string());
    return std::move(it->second);
  };
  for (const auto& e : model.params().entries()) e.param->value = take(e.name, e.param->value);

  LoadedCheckpoint out{std::move(model), std::nullopt};
  if (kv.get_bool("train.has_optimizer", false)) {
    TrainState s = TrainState::fresh(out.model);
    s.epochs_done = static_cast<int>(kv.get_int("train.epochs_done"));
    s.steps_done = kv.get_int("train.steps_done");
    s.optimizer.step = kv.get_int("train.optimizer_step");
    s.optimizer.hyper.beta1 = kv.get_double("train.beta1");
    s.optimizer.hyper.beta2 = kv.get_double("train.beta2");
    s.optimizer.hyper.eps = kv.get_double("train.eps");
    s.optimizer.hyper.weight_decay = kv.get_double("train.weight_decay");
    const auto& entries = out.model.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      s.optimizer.first[i] = take(kMomentPrefix1 + entries[i].name, s.optimizer.first[i]);
      s.optimizer.second[i] = take(kMomentPrefix2 + entries[i].name, s.optimizer.second[i]);
    }
    out.state = std::move(s);
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const MAEConfig& expected) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (!ck.model.config().same_architecture(expected))
    throw ConfigMismatchError("checkpoint architecture (tokenizer " + to_string(ck.model.config().tokenizer) +
                              ", d_E " + std::to_string(ck.model.config().embed_dim) +
                              ") does not match the requested configuration (tokenizer " +
                              to_string(expected.tokenizer) + ", d_E " +
                              std::to_string(expected.embed_dim) + ")");
  return ck;
}

}  // namespace nerve
