#include "heteroqa/checkpoint.hpp"

#include <map>

#include "binary_io.hpp"
#include "heteroqa/error.hpp"

namespace heteroqa {
namespace {

constexpr std::string_view kMagic{"HQACKPT\x01", 8};

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace

Checkpoint make_checkpoint(const HeteroQaModel& model, const RunConfig& config) {
  Checkpoint ck;
  ck.config_hash = config_hash(config);
  ck.config_text = render_config(config);
  const auto regular = model.vocab().regular_tokens();
  ck.vocab.assign(regular.begin(), regular.end());
  for (const auto& name : model.params().names()) ck.tensors.push_back({name, model.params().get(name).value()});
  return ck;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.put_raw(kMagic);
  w.put<std::uint32_t>(ck.version);
  w.put<std::uint64_t>(ck.config_hash);
  w.put_string(ck.config_text);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.vocab.size()));
  for (const auto& t : ck.vocab) w.put_string(t);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    w.put_string(t.name);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(t.value.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(t.value.cols()));
  }
  for (const auto& t : ck.tensors) {
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) w.put<double>(t.value(r, c));
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < kMagic.size() || r.get_raw(kMagic.size()) != kMagic) {
    throw ValidationError("not a checkpoint file");
  }
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.config_hash = r.get<std::uint64_t>();
  ck.config_text = r.get_string();
  const auto n_vocab = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_vocab; ++i) ck.vocab.push_back(r.get_string());
  const auto n_tensors = r.get<std::uint32_t>();
  std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    t.name = r.get_string();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    shapes.emplace_back(rows, cols);
    ck.tensors.push_back(std::move(t));
  }
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const auto [rows, cols] = shapes[i];
    auto& m = ck.tensors[i].value;
    m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index row = 0; row < m.rows(); ++row)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(row, c) = r.get<double>();
  }
  if (!r.done()) throw ValidationError("trailing bytes after checkpoint payload");
  const auto stored = checkpoint_config(ck);
  if (config_hash(stored) != ck.config_hash) {
    throw ValidationError("checkpoint config hash mismatch (stored " + hex(ck.config_hash) + ", embedded config " +
                          hex(config_hash(stored)) + ")");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  detail::write_file(path.string(), serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path.string()));
}

RunConfig checkpoint_config(const Checkpoint& checkpoint) {
  RunConfig config;
  try {
    apply_config_text(config, checkpoint.config_text, "checkpoint");
  } catch (const UsageError& e) {
    throw ValidationError(e.what());
  }
  return config;
}

HeteroQaModel restore_model(const Checkpoint& checkpoint, const RunConfig& config) {
  if (config_hash(config) != checkpoint.config_hash) {
    throw ValidationError("config hash " + hex(config_hash(config)) + " does not match checkpoint hash " +
                          hex(checkpoint.config_hash) + "; architecture keys differ from the training run");
  }
  HeteroQaModel model(config.model, Vocabulary::from_tokens(checkpoint.vocab), config.train.seed);
  auto& params = model.params();
  if (params.size() != checkpoint.tensors.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(checkpoint.tensors.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
  }
  for (const auto& t : checkpoint.tensors) {
    if (!params.contains(t.name)) throw ValidationError("unexpected checkpoint tensor " + t.name);
    auto& var = params.get(t.name);
    if (var.rows() != t.value.rows() || var.cols() != t.value.cols()) {
      throw ValidationError("shape mismatch for " + t.name);
    }
    var.mutable_value() = t.value;
  }
  return model;
}

}  // namespace heteroqa
