#include "rax/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "rax/binary_io.hpp"
#include "rax/error.hpp"
#include "rax/parallel.hpp"

namespace rax {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Forest: return "forest";
    case ModelKind::Boosted: return "boosted";
    case ModelKind::Linear: return "linear";
  }
  return "unknown";
}

int argmax_class(std::span<const double, 3> p) {
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

// Inference layout: children of an internal node are adjacent, so a node
// stores only its left child. Leaves index into the value table.
namespace {
struct FlatNode {
  double threshold;
  std::int32_t feature;  // -1 for leaves
  std::int32_t next;     // left child, or leaf value offset
};
}  // namespace

struct Model::Compiled {
  std::vector<FlatNode> nodes;
  std::vector<std::uint32_t> roots;
  std::vector<double> leaf_values;
  int outputs = 1;
};

namespace {

void flatten(const Tree& tree, std::vector<FlatNode>& nodes, std::vector<double>& values,
             int outputs) {
  const auto base = static_cast<std::int32_t>(nodes.size());
  // Breadth-first so siblings land next to each other.
  std::vector<std::int32_t> queue{0};
  std::vector<std::int32_t> slot(tree.size(), -1);
  slot[0] = base;
  nodes.push_back({});
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const auto& src = tree.node(static_cast<std::size_t>(queue[q]));
    if (src.is_leaf()) {
      FlatNode& dst = nodes[static_cast<std::size_t>(slot[queue[q]])];
      dst.feature = -1;
      dst.threshold = 0;
      dst.next = static_cast<std::int32_t>(values.size());
      const auto v = tree.value(static_cast<std::size_t>(queue[q]));
      values.insert(values.end(), v.begin(), v.begin() + outputs);
      continue;
    }
    const auto left = static_cast<std::int32_t>(nodes.size());
    nodes.push_back({});
    nodes.push_back({});
    FlatNode& dst = nodes[static_cast<std::size_t>(slot[queue[q]])];
    dst.feature = src.feature;
    dst.threshold = src.threshold;
    dst.next = left;
    slot[src.left] = left;
    slot[src.right] = left + 1;
    queue.push_back(src.left);
    queue.push_back(src.right);
  }
}

}  // namespace

Model::Model(ForestModel m) : model_(std::move(m)) { compile(); }
Model::Model(BoostedModel m) : model_(std::move(m)) { compile(); }
Model::Model(LinearModel m) : model_(std::move(m)) { compile(); }

void Model::compile() {
  auto c = std::make_shared<Compiled>();
  const std::vector<Tree>* trees = nullptr;
  if (const auto* f = forest()) {
    trees = &f->trees;
    c->outputs = 3;
  } else if (const auto* b = boosted()) {
    trees = &b->trees;
    c->outputs = 1;
  }
  if (trees) {
    for (const auto& t : *trees) {
      if (t.size() == 0) throw DataError("bad_model", "model contains an empty tree");
      c->roots.push_back(static_cast<std::uint32_t>(c->nodes.size()));
      flatten(t, c->nodes, c->leaf_values, c->outputs);
    }
  }
  compiled_ = std::move(c);
}

ModelKind Model::kind() const { return static_cast<ModelKind>(model_.index()); }

std::uint64_t Model::schema_hash() const {
  return std::visit([](const auto& m) { return m.schema_hash; }, model_);
}

std::size_t Model::n_features() const {
  return std::visit([](const auto& m) { return m.n_features; }, model_);
}

void Model::check_schema(std::uint64_t expected) const {
  if (schema_hash() != expected)
    throw DataError("schema_mismatch", "model schema " + hash_hex(schema_hash()) +
                                           " does not match data schema " + hash_hex(expected));
}

namespace {
constexpr std::size_t kBlock = 128;
}

// Tree-major over a block of rows keeps one tree hot in cache at a time.
void Model::margins_block(const double* x, std::size_t n, double* out) const {
  const std::size_t d = n_features();
  const auto& c = *compiled_;
  if (const auto* lin = linear()) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = lin->scores({x + i * d, d});
      std::copy(s.begin(), s.end(), out + 3 * i);
    }
    return;
  }
  std::fill(out, out + 3 * n, 0.0);
  const auto* nodes = c.nodes.data();
  const auto* leaves = c.leaf_values.data();
  if (const auto* b = boosted()) {
    double sums[kBlock * 3];
    std::fill(sums, sums + 3 * n, 0.0);
    for (std::size_t t = 0; t < c.roots.size(); ++t) {
      const std::uint32_t root = c.roots[t];
      const std::size_t cls = t % 3;
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = x + i * d;
        std::uint32_t k = root;
        while (nodes[k].feature >= 0)
          k = static_cast<std::uint32_t>(nodes[k].next) + (row[nodes[k].feature] >= nodes[k].threshold);
        sums[3 * i + cls] += leaves[nodes[k].next];
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) out[3 * i + k] = b->base_score[k] + b->learning_rate * sums[3 * i + k];
    return;
  }
  for (std::uint32_t root : c.roots) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = x + i * d;
      std::uint32_t k = root;
      while (nodes[k].feature >= 0)
        k = static_cast<std::uint32_t>(nodes[k].next) + (row[nodes[k].feature] >= nodes[k].threshold);
      const double* v = leaves + nodes[k].next;
      for (int j = 0; j < 3; ++j) out[3 * i + j] += v[j];
    }
  }
  const double m = c.roots.empty() ? 1.0 : static_cast<double>(c.roots.size());
  for (std::size_t i = 0; i < 3 * n; ++i) out[i] = c.roots.empty() ? 1.0 / 3 : out[i] / m;
}

void Model::margins(const FeatureMatrix& x, std::span<double> out) const {
  if (x.cols() != n_features())
    throw DataError("bad_input", "feature count does not match the model");
  if (out.size() != 3 * x.rows()) throw DataError("bad_input", "output buffer has the wrong size");
  for (std::size_t i = 0; i < x.rows(); i += kBlock) {
    const std::size_t n = std::min(kBlock, x.rows() - i);
    margins_block(x.data() + i * x.cols(), n, out.data() + 3 * i);
  }
}

void Model::predict_proba(const FeatureMatrix& x, std::span<double> out, unsigned threads) const {
  if (x.cols() != n_features())
    throw DataError("bad_input", "feature count does not match the model");
  if (out.size() != 3 * x.rows()) throw DataError("bad_input", "output buffer has the wrong size");
  const std::size_t blocks = (x.rows() + kBlock - 1) / kBlock;
  const bool is_forest = kind() == ModelKind::Forest;
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t i0 = b * kBlock;
    const std::size_t n = std::min(kBlock, x.rows() - i0);
    double* o = out.data() + 3 * i0;
    margins_block(x.data() + i0 * x.cols(), n, o);
    if (is_forest) {
      for (std::size_t i = 0; i < n; ++i) {
        const double s = o[3 * i] + o[3 * i + 1] + o[3 * i + 2];
        for (int c = 0; c < 3; ++c) o[3 * i + c] /= s;
      }
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = softmax(std::span<const double, 3>(o + 3 * i, 3));
      std::copy(p.begin(), p.end(), o + 3 * i);
    }
  });
}

std::vector<ClassVector> Model::predict_proba(const FeatureMatrix& x, unsigned threads) const {
  std::vector<double> flat(3 * x.rows());
  predict_proba(x, flat, threads);
  std::vector<ClassVector> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
  return out;
}

std::vector<int> Model::predict_class(const FeatureMatrix& x, unsigned threads) const {
  const auto p = predict_proba(x, threads);
  std::vector<int> y(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) y[i] = argmax_class(p[i]);
  return y;
}

ScoreResult score_batch(const Model& model, const FeatureMatrix& x, unsigned threads) {
  ScoreResult r;
  const auto t0 = std::chrono::steady_clock::now();
  r.proba = model.predict_proba(x, threads);
  r.labels.resize(r.proba.size());
  for (std::size_t i = 0; i < r.proba.size(); ++i) r.labels[i] = argmax_class(r.proba[i]);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.rows_per_second = r.seconds > 0 ? static_cast<double>(x.rows()) / r.seconds : 0.0;
  return r;
}

std::vector<ClassVector> predict_proba(const Model& model, std::span<const EventFeatureRow> rows,
                                       const FeatureSchema& schema) {
  model.check_schema(schema.hash());
  return model.predict_proba(FeatureMatrix::from_rows(rows));
}

std::vector<int> predict_class(const Model& model, std::span<const EventFeatureRow> rows,
                               const FeatureSchema& schema) {
  model.check_schema(schema.hash());
  return model.predict_class(FeatureMatrix::from_rows(rows));
}

// ---------------------------------------------------------------------------
// RAXM codec

namespace {

constexpr char kMagic[4] = {'R', 'A', 'X', 'M'};
constexpr std::uint16_t kVersion = 1;

void put_tree(ByteWriter& w, const Tree& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.size()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(t.n_outputs()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& n = t.node(i);
    w.put<std::int32_t>(n.feature);
    w.put<double>(n.threshold);
    w.put<std::int32_t>(n.left);
    w.put<std::int32_t>(n.right);
    w.put<double>(n.cover);
    for (double v : t.value(i)) w.put<double>(v);
  }
}

Tree get_tree(ByteReader& r, std::size_t n_features) {
  const auto n = r.get<std::uint32_t>();
  const auto outputs = r.get<std::uint16_t>();
  if (outputs != 1 && outputs != 3) throw DataError("bad_model", "unsupported tree output width");
  if (static_cast<std::size_t>(n) * (28 + 8 * outputs) > r.remaining())
    throw DataError("truncated", "tree table exceeds file size");
  Tree t(outputs);
  std::vector<double> v(outputs);
  for (std::uint32_t i = 0; i < n; ++i) {
    TreeNode node;
    node.feature = r.get<std::int32_t>();
    node.threshold = r.get<double>();
    node.left = r.get<std::int32_t>();
    node.right = r.get<std::int32_t>();
    node.cover = r.get<double>();
    for (auto& x : v) x = r.get<double>();
    t.add_node(node, v);
  }
  t.validate(n_features);
  return t;
}

void put_vec(ByteWriter& w, std::span<const double> v) {
  for (double x : v) w.put<double>(x);
}

template <std::size_t N>
void get_array(ByteReader& r, std::array<double, N>& a) {
  for (auto& x : a) x = r.get<double>();
}

}  // namespace

std::vector<std::uint8_t> Model::serialize() const {
  ByteWriter w;
  for (char ch : kMagic) w.put<std::uint8_t>(static_cast<std::uint8_t>(ch));
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(kind()));
  w.put<std::uint64_t>(schema_hash());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n_features()));
  if (const auto* f = forest()) {
    put_vec(w, f->class_weights);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(f->trees.size()));
    for (const auto& t : f->trees) put_tree(w, t);
  } else if (const auto* b = boosted()) {
    w.put<double>(b->learning_rate);
    w.put<double>(b->lambda);
    put_vec(w, b->base_score);
    put_vec(w, b->class_weights);
    w.put<std::uint8_t>(b->objective == "focal" ? 1 : 0);
    w.put<double>(b->gamma);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b->trees.size()));
    for (const auto& t : b->trees) put_tree(w, t);
  } else if (const auto* l = linear()) {
    w.put<double>(l->l2);
    w.put<std::uint8_t>(l->converged ? 1 : 0);
    w.put<std::int32_t>(l->iterations);
    w.put<double>(l->grad_norm);
    put_vec(w, l->means);
    put_vec(w, l->scales);
    put_vec(w, l->weights);
    put_vec(w, l->bias);
  }
  w.put_crc_trailer();
  return w.take();
}

Model Model::deserialize(std::span<const std::uint8_t> bytes) {
  const auto body = verify_crc_trailer(bytes, "model file");
  ByteReader r(body);
  for (char ch : kMagic)
    if (r.get<std::uint8_t>() != static_cast<std::uint8_t>(ch))
      throw DataError("bad_model", "not a RAXM model file");
  if (const auto v = r.get<std::uint16_t>(); v != kVersion)
    throw DataError("bad_model", "unsupported model version " + std::to_string(v));
  const auto kind = r.get<std::uint8_t>();
  const auto hash = r.get<std::uint64_t>();
  const auto d = r.get<std::uint32_t>();
  auto finish = [&](auto m) {
    if (r.remaining() != 0) throw DataError("bad_model", "trailing bytes in model file");
    m.schema_hash = hash;
    m.n_features = d;
    return Model(std::move(m));
  };
  switch (kind) {
    case 0: {
      ForestModel f;
      get_array(r, f.class_weights);
      const auto n = r.get<std::uint32_t>();
      for (std::uint32_t i = 0; i < n; ++i) f.trees.push_back(get_tree(r, d));
      return finish(std::move(f));
    }
    case 1: {
      BoostedModel b;
      b.learning_rate = r.get<double>();
      b.lambda = r.get<double>();
      get_array(r, b.base_score);
      get_array(r, b.class_weights);
      b.objective = r.get<std::uint8_t>() == 1 ? "focal" : "softmax";
      b.gamma = r.get<double>();
      const auto n = r.get<std::uint32_t>();
      if (n % 3 != 0) throw DataError("bad_model", "boosted tree count is not a multiple of 3");
      for (std::uint32_t i = 0; i < n; ++i) b.trees.push_back(get_tree(r, d));
      return finish(std::move(b));
    }
    case 2: {
      LinearModel l;
      l.l2 = r.get<double>();
      l.converged = r.get<std::uint8_t>() != 0;
      l.iterations = r.get<std::int32_t>();
      l.grad_norm = r.get<double>();
      auto get_n = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (auto& x : v) x = r.get<double>();
      };
      get_n(l.means, d);
      get_n(l.scales, d);
      get_n(l.weights, 3 * static_cast<std::size_t>(d));
      get_array(r, l.bias);
      for (double s : l.scales)
        if (!(s > 0)) throw DataError("bad_model", "linear model has a non-positive scale");
      return finish(std::move(l));
    }
    default:
      throw DataError("bad_model", "unknown model kind " + std::to_string(kind));
  }
}

void Model::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, serialize());
}

Model Model::load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

}  // namespace rax
