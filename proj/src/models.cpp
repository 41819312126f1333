#include "gradpath/models.hpp"

#include <bit>
#include <fstream>
#include <map>

#include "gradpath/gradinput.hpp"

namespace gradpath {

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mnist: return "mnist";
    case DatasetKind::cifar10: return "cifar10";
    case DatasetKind::cifar100: return "cifar100";
    case DatasetKind::toy: return "toy";
  }
  return "unknown";
}

std::string_view to_string(Topology topology) {
  return topology == Topology::single ? "single" : "dual";
}

std::string_view arch_tag(Topology topology) {
  return topology == Topology::single ? "baseline" : "dualpath";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "mnist") return DatasetKind::mnist;
  if (name == "cifar10") return DatasetKind::cifar10;
  if (name == "cifar100") return DatasetKind::cifar100;
  if (name == "toy") return DatasetKind::toy;
  throw ParameterError("unknown dataset kind '" + std::string(name) + "'");
}

Topology parse_topology(std::string_view name) {
  if (name == "baseline" || name == "single") return Topology::single;
  if (name == "dualpath" || name == "dual") return Topology::dual;
  throw ParameterError("unknown architecture '" + std::string(name) + "'");
}

Architecture architecture_for(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mnist:
      return {kind, 1, 28, 28, {{4, true}}, {64}, 10};
    case DatasetKind::cifar10:
      return {kind, 3, 32, 32, {{16, true}, {32, false}, {64, false}}, {128, 128}, 10};
    case DatasetKind::cifar100:
      return {kind, 3, 32, 32, {{16, true}, {32, false}, {64, false}}, {128, 128}, 100};
    case DatasetKind::toy:
      return {kind, 1, 8, 8, {{4, true}}, {32}, 10};
  }
  throw ParameterError("unknown dataset kind " +
                       std::to_string(static_cast<std::uint32_t>(kind)));
}

Architecture tiny_architecture(std::size_t filters, std::size_t size, std::size_t classes) {
  return {DatasetKind::toy, 1, size, size, {{filters, true}}, {8}, classes};
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelSpec

template <typename T>
ModelSpec<T>::ModelSpec(Architecture arch, Topology topology,
                        std::vector<std::shared_ptr<Layer<T>>> trunk,
                        std::vector<std::shared_ptr<Layer<T>>> head)
    : arch_(std::move(arch)),
      topology_(topology),
      trunk_(std::move(trunk)),
      head_(std::move(head)),
      transform_([](const BasicTensor<T>& x) { return gradient_transform(x); }),
      generation_(std::make_shared<std::uint64_t>(0)) {}

template <typename T>
ForwardOutput<T> ModelSpec<T>::forward(const BasicTensor<T>& batch, Mode mode,
                                       bool record_layers) {
  if (batch.rank() != 4 || batch.dim(1) != arch_.channels || batch.dim(2) != arch_.height ||
      batch.dim(3) != arch_.width) {
    throw DimensionError("model for " + std::string(to_string(arch_.kind)) + " expects [b," +
                         std::to_string(arch_.channels) + "," + std::to_string(arch_.height) +
                         "," + std::to_string(arch_.width) + "], got " +
                         batch.shape().to_string());
  }
  ForwardOutput<T> out;
  ForwardTrace<T>& trace = out.trace;
  trace.generation = ++*generation_;
  trace.topology = topology_;
  trace.mode = mode;
  trace.batch = batch.dim(0);

  BasicTensor<T> x;
  if (topology_ == Topology::dual) {
    BasicTensor<T> second = transform_(batch);
    if (second.shape() != batch.shape()) {
      throw DimensionError("input transform changed shape " + batch.shape().to_string() +
                           " -> " + second.shape().to_string());
    }
    x = concat_batch(batch, second);
  } else {
    x = batch;
  }
  for (auto& layer : trunk_) {
    x = layer->forward(x, mode);
    if (record_layers) trace.layer_outputs.push_back(x);
  }
  trace.features = x;

  if (topology_ == Topology::dual) {
    const std::size_t b = trace.batch;
    std::array<BasicTensor<T>, 2> halves{slice_batch(x, 0, b), slice_batch(x, b, b)};
    x = add_elementwise(halves[0], halves[1]);
    trace.branches = std::move(halves);
  }
  trace.head_input = x;

  for (auto& layer : head_) {
    x = layer->forward(x, mode);
    if (record_layers) trace.layer_outputs.push_back(x);
  }
  out.logits = std::move(x);
  return out;
}

template <typename T>
void ModelSpec<T>::backward(const ForwardTrace<T>& trace, const BasicTensor<T>& logits_grad) {
  if (trace.generation == 0 || trace.generation != *generation_ || trace.topology != topology_) {
    throw StateError("model backward(): trace is stale or belongs to another forward pass");
  }
  ++*generation_;  // a trace is good for one backward pass

  BasicTensor<T> d = logits_grad;
  for (auto it = head_.rbegin(); it != head_.rend(); ++it) d = (*it)->backward(d);
  if (topology_ == Topology::dual) {
    // ADD routes the same gradient to both halves of the concatenated batch.
    d = concat_batch(d, d);
  }
  for (auto it = trunk_.rbegin(); it != trunk_.rend(); ++it) d = (*it)->backward(d);
}

template <typename T>
std::vector<Param<T>*> ModelSpec<T>::params() const {
  std::vector<Param<T>*> out;
  for (const auto* group : {&trunk_, &head_})
    for (const auto& layer : *group)
      for (auto& p : layer->params()) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>*>> ModelSpec<T>::named_tensors() const {
  std::vector<std::pair<std::string, BasicTensor<T>*>> out;
  for (const auto* group : {&trunk_, &head_}) {
    for (const auto& layer : *group) {
      for (auto& p : layer->params()) out.emplace_back(layer->name() + "." + p.name, &p.value);
      for (auto& b : layer->buffers()) out.emplace_back(layer->name() + "." + b.name, b.value);
    }
  }
  return out;
}

template <typename T>
void ModelSpec<T>::zero_grad() const {
  for (Param<T>* p : params()) p->grad.fill(T{0});
}

template <typename T>
void ModelSpec<T>::reseed_dropout(std::uint64_t seed) const {
  std::uint64_t index = 0;
  for (const auto* group : {&trunk_, &head_}) {
    for (const auto& layer : *group) {
      ++index;
      if (auto* d = dynamic_cast<Dropout<T>*>(layer.get())) {
        d->reseed(splitmix64(seed ^ splitmix64(index)));
      }
    }
  }
}

template <typename T>
ModelSpec<T> ModelSpec<T>::with_topology(Topology topology) const {
  ModelSpec copy = *this;
  copy.topology_ = topology;
  return copy;
}

template <typename T>
ModelSpec<T> ModelSpec<T>::clone() const {
  auto deep = [](const std::vector<std::shared_ptr<Layer<T>>>& layers) {
    std::vector<std::shared_ptr<Layer<T>>> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(std::shared_ptr<Layer<T>>(l->clone()));
    return out;
  };
  ModelSpec copy(arch_, topology_, deep(trunk_), deep(head_));
  copy.transform_ = transform_;
  return copy;
}

// ---------------------------------------------------------------------------
// Builders

template <typename T>
ModelSpec<T> build_model(const Architecture& arch, Topology topology, std::uint64_t seed) {
  if (arch.blocks.empty()) throw ParameterError("architecture needs at least one conv block");
  std::mt19937_64 rng(seed);
  std::vector<std::shared_ptr<Layer<T>>> trunk;
  std::vector<std::shared_ptr<Layer<T>>> head;

  std::size_t channels = arch.channels, h = arch.height, w = arch.width;
  std::size_t pool_index = 0;
  for (std::size_t i = 0; i < arch.blocks.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    const ConvBlock& block = arch.blocks[i];
    trunk.push_back(std::make_shared<Conv2d<T>>("conv2d_" + n, channels, block.filters, 1, rng));
    trunk.push_back(std::make_shared<Relu<T>>("activation_" + n));
    if (block.pool) {
      trunk.push_back(
          std::make_shared<MaxPool2x2<T>>("max_pooling2d_" + std::to_string(++pool_index)));
      h /= 2;
      w /= 2;
    }
    trunk.push_back(std::make_shared<Dropout<T>>("dropout_" + n, arch.dropout, 0));
    trunk.push_back(std::make_shared<BatchNorm<T>>("batch_normalization_" + n, block.filters));
    channels = block.filters;
  }
  trunk.push_back(std::make_shared<Flatten<T>>("flatten_1"));

  std::size_t width = channels * h * w;
  std::vector<std::size_t> widths = arch.dense_widths;
  widths.push_back(arch.classes);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    head.push_back(
        std::make_shared<Dense<T>>("dense_" + std::to_string(i + 1), width, widths[i], rng));
    width = widths[i];
  }

  ModelSpec<T> spec(arch, topology, std::move(trunk), std::move(head));
  spec.reseed_dropout(seed);
  return spec;
}

template <typename T>
ModelSpec<T> build_baseline(DatasetKind kind, std::uint64_t seed) {
  return build_model<T>(architecture_for(kind), Topology::single, seed);
}

template <typename T>
ModelSpec<T> build_dualpath(DatasetKind kind, std::uint64_t seed) {
  return build_model<T>(architecture_for(kind), Topology::dual, seed);
}

template <typename T>
std::size_t param_count(const ModelSpec<T>& spec) {
  std::size_t total = 0;
  for (const Param<T>* p : spec.params()) total += p->value.size();
  return total;
}

template <typename T>
std::vector<LayerRow> layer_table(const ModelSpec<T>& spec) {
  const Architecture& a = spec.architecture();
  Shape shape{1, a.channels, a.height, a.width};
  std::vector<LayerRow> rows;
  auto add = [&](const std::shared_ptr<Layer<T>>& layer) {
    shape = layer->output_shape(shape);
    std::size_t n = 0;
    for (auto& p : layer->params()) n += p.value.size();
    std::vector<std::size_t> dims = shape.dims();
    std::string s = "(";
    for (std::size_t i = 1; i < dims.size(); ++i) s += (i > 1 ? "," : "") + std::to_string(dims[i]);
    rows.push_back({layer->name(), std::string(to_string(layer->kind())), layer->describe(),
                    s + ")", n});
  };
  if (spec.topology() == Topology::dual) {
    rows.push_back({"lambda_1", "gradient_image", "dx + dy, fed in parallel with the input",
                    "(" + std::to_string(a.channels) + "," + std::to_string(a.height) + "," +
                        std::to_string(a.width) + ")",
                    0});
  }
  for (const auto& l : spec.trunk()) add(l);
  if (spec.topology() == Topology::dual) {
    rows.push_back({"add_1", "add", "sum of both branch feature vectors",
                    "(" + std::to_string(shape[1]) + ")", 0});
  }
  for (const auto& l : spec.head()) add(l);
  rows.push_back({"softmax", std::string(to_string(LayerKind::softmax_cross_entropy)),
                  "class probabilities", "(" + std::to_string(a.classes) + ")", 0});
  return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[5] = {'G', 'P', 'T', 'H', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  std::uint64_t offset() const { return pos_; }

  std::uint32_t u32(const char* what) {
    need(4, what);
    const std::uint32_t v = static_cast<std::uint32_t>(bytes_[pos_]) |
                            (static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8) |
                            (static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16) |
                            (static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
  }

  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelSpec<float>& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(spec.dataset_kind()));
  put_u32(out, static_cast<std::uint32_t>(spec.topology()));
  for (const auto& [name, tensor] : spec.named_tensors()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor->rank()));
    for (std::size_t d : tensor->shape().dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : tensor->data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

ModelSpec<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  ByteReader r(std::move(bytes));

  if (r.str(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) {
    throw FormatError("not a checkpoint (bad magic)", 0);
  }
  const std::uint64_t kind_at = r.offset();
  const std::uint32_t kind = r.u32("dataset kind");
  if (kind > static_cast<std::uint32_t>(DatasetKind::toy)) {
    throw FormatError("unknown dataset kind " + std::to_string(kind), kind_at);
  }
  const std::uint64_t topo_at = r.offset();
  const std::uint32_t topology = r.u32("topology");
  if (topology > static_cast<std::uint32_t>(Topology::dual)) {
    throw FormatError("unknown topology " + std::to_string(topology), topo_at);
  }

  ModelSpec<float> spec = build_model<float>(architecture_for(static_cast<DatasetKind>(kind)),
                                             static_cast<Topology>(topology), 0);
  std::map<std::string, BasicTensor<float>*> slots;
  for (const auto& [name, tensor] : spec.named_tensors()) slots.emplace(name, tensor);

  std::size_t loaded = 0;
  while (!r.at_end()) {
    const std::uint64_t entry_at = r.offset();
    const std::uint32_t name_len = r.u32("name length");
    const std::string name = r.str(name_len, "tensor name");
    auto slot = slots.find(name);
    if (slot == slots.end() || slot->second == nullptr) {
      throw FormatError("unexpected or duplicate tensor '" + name + "'", entry_at);
    }
    const std::uint32_t rank = r.u32("rank");
    std::vector<std::size_t> dims;
    for (std::uint32_t i = 0; i < rank; ++i) dims.push_back(r.u32("dimension"));
    if (dims != slot->second->shape().dims()) {
      throw FormatError("tensor '" + name + "' has shape mismatching the model", entry_at);
    }
    for (float& v : slot->second->data()) v = std::bit_cast<float>(r.u32("tensor values"));
    slot->second = nullptr;
    ++loaded;
  }
  if (loaded != slots.size()) {
    throw FormatError("checkpoint is missing " + std::to_string(slots.size() - loaded) +
                          " tensors",
                      r.offset());
  }
  return spec;
}

#define GRADPATH_INSTANTIATE(T)                                                              \
  template class ModelSpec<T>;                                                               \
  template ModelSpec<T> build_model<T>(const Architecture&, Topology, std::uint64_t);        \
  template ModelSpec<T> build_baseline<T>(DatasetKind, std::uint64_t);                       \
  template ModelSpec<T> build_dualpath<T>(DatasetKind, std::uint64_t);                       \
  template std::size_t param_count(const ModelSpec<T>&);                                     \
  template std::vector<LayerRow> layer_table(const ModelSpec<T>&);

GRADPATH_INSTANTIATE(float)
GRADPATH_INSTANTIATE(double)

#undef GRADPATH_INSTANTIATE

}  // namespace gradpath
