#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rbsched/random.hpp"

namespace rbsched {

// Layer widths of the dueling network. `shared` are the trunk layers; each of the
// value and advantage branches has one hidden layer of `branch` units followed by
// a linear head of width 1 (value) or `actions` (advantage).
struct QNetShape {
  int input = 50;
  std::vector<int> shared{300, 300, 300, 300};
  int branch = 200;
  int actions = 4;

  friend bool operator==(const QNetShape&, const QNetShape&) = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat buffers are over-aligned so Eigen's vectorized loops split them the same
// way in every process; otherwise results can differ in the last bit.
template <typename Scalar>
using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

template <typename Scalar>
struct AdamMoments {
  AlignedVector<Scalar> first;
  AlignedVector<Scalar> second;
  std::int64_t step = 0;
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
class DuelingQNet {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t weight_offset = 0;  // column-major out x in
    std::size_t bias_offset = 0;
  };

  // Activations kept from a forward pass for backpropagation.
  struct Trace {
    Matrix input;
    std::vector<Matrix> shared;  // post-ReLU activations of each trunk layer
    Matrix value_hidden;
    Matrix advantage_hidden;
    Matrix value;      // 1 x B
    Matrix advantage;  // actions x B
    Matrix q;          // actions x B
  };

  DuelingQNet() = default;

  DuelingQNet(QNetShape shape, std::uint64_t seed) : shape_(std::move(shape)), seed_(seed) {
    build_layout();
    initialize(seed);
  }

  const QNetShape& shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_parameters() const { return params_.size(); }
  std::span<Scalar> parameters() { return params_; }
  std::span<const Scalar> parameters() const { return params_; }
  AdamMoments<Scalar>& moments() { return moments_; }
  const AdamMoments<Scalar>& moments() const { return moments_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Index helpers into layers(): trunk layers first, then the two branches.
  std::size_t value_hidden_index() const { return shape_.shared.size(); }
  std::size_t value_head_index() const { return shape_.shared.size() + 1; }
  std::size_t advantage_hidden_index() const { return shape_.shared.size() + 2; }
  std::size_t advantage_head_index() const { return shape_.shared.size() + 3; }

  ConstMatrixMap weights(std::size_t layer) const {
    const auto& l = layers_[layer];
    return ConstMatrixMap(params_.data() + l.weight_offset, l.out, l.in);
  }
  MatrixMap weights(std::size_t layer) {
    const auto& l = layers_[layer];
    return MatrixMap(params_.data() + l.weight_offset, l.out, l.in);
  }
  ConstVectorMap bias(std::size_t layer) const {
    const auto& l = layers_[layer];
    return ConstVectorMap(params_.data() + l.bias_offset, l.out);
  }
  VectorMap bias(std::size_t layer) {
    const auto& l = layers_[layer];
    return VectorMap(params_.data() + l.bias_offset, l.out);
  }

  // states: input x B, one column per state.
  void forward(const Eigen::Ref<const Matrix>& states, Trace& t) const {
    if (states.rows() != shape_.input)
      throw std::invalid_argument("state vector has " + std::to_string(states.rows()) +
                                  " features, network expects " + std::to_string(shape_.input));
    if (!states.allFinite()) throw std::invalid_argument("state vector contains non-finite values");
    t.input = states;
    t.shared.resize(shape_.shared.size());
    for (std::size_t i = 0; i < shape_.shared.size(); ++i) {
      t.shared[i] = affine(i, i == 0 ? t.input : t.shared[i - 1]);
      relu(t.shared[i]);
    }
    const Matrix& trunk = t.shared.empty() ? t.input : t.shared.back();
    t.value_hidden = affine(value_hidden_index(), trunk);
    relu(t.value_hidden);
    t.advantage_hidden = affine(advantage_hidden_index(), trunk);
    relu(t.advantage_hidden);
    t.value = affine(value_head_index(), t.value_hidden);
    t.advantage = affine(advantage_head_index(), t.advantage_hidden);
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean_adv = t.advantage.colwise().mean();
    t.q = t.advantage;
    t.q.rowwise() += t.value.row(0) - mean_adv;
  }

  Matrix forward(const Eigen::Ref<const Matrix>& states) const {
    Trace t;
    forward(states, t);
    return t.q;
  }

  // Q-values for one state.
  Vector q_values(std::span<const Scalar> state) const {
    Matrix s = ConstVectorMap(state.data(), static_cast<Eigen::Index>(state.size()));
    return forward(s).col(0);
  }

  // Gradient of mean_b w_b (target_b - q(s_b, a_b))^2 written into `grad`
  // (overwritten); w_b = 1 when `sample_weights` is empty. Returns the per-sample
  // TD errors target - q.
  std::vector<Scalar> gradient(const Eigen::Ref<const Matrix>& states, std::span<const int> actions,
                               std::span<const Scalar> targets, std::span<Scalar> grad,
                               std::span<const Scalar> sample_weights = {}) const {
    const auto batch = states.cols();
    if (static_cast<std::size_t>(batch) != actions.size() ||
        actions.size() != targets.size() ||
        (!sample_weights.empty() && sample_weights.size() != actions.size()))
      throw std::invalid_argument("gradient: batch size mismatch");
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient: buffer size mismatch");
    Trace t;
    forward(states, t);

    std::vector<Scalar> td(actions.size());
    Matrix dq = Matrix::Zero(shape_.actions, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const int a = actions[b];
      if (a < 0 || a >= shape_.actions) throw std::invalid_argument("gradient: action out of range");
      td[b] = targets[b] - t.q(a, b);
      const Scalar w = sample_weights.empty() ? Scalar(1) : sample_weights[b];
      dq(a, b) = Scalar(-2) * w * td[b] / static_cast<Scalar>(batch);
    }
    // q = V + A - mean(A)
    const Matrix dvalue = dq.colwise().sum();
    Matrix dadv = dq;
    dadv.rowwise() -= dq.colwise().mean();

    std::fill(grad.begin(), grad.end(), Scalar(0));
    const Matrix& trunk = t.shared.empty() ? t.input : t.shared.back();

    Matrix dvh = backward_linear(value_head_index(), dvalue, t.value_hidden, grad);
    relu_backward(dvh, t.value_hidden);
    Matrix dtrunk = backward_linear(value_hidden_index(), dvh, trunk, grad);

    Matrix dah = backward_linear(advantage_head_index(), dadv, t.advantage_hidden, grad);
    relu_backward(dah, t.advantage_hidden);
    dtrunk += backward_linear(advantage_hidden_index(), dah, trunk, grad);

    for (std::size_t i = shape_.shared.size(); i-- > 0;) {
      relu_backward(dtrunk, t.shared[i]);
      dtrunk = backward_linear(i, dtrunk, i == 0 ? t.input : t.shared[i - 1], grad);
    }
    return td;
  }

  // Hard copy used for target-network synchronization.
  DuelingQNet clone() const { return *this; }

 private:
  Matrix affine(std::size_t layer, const Matrix& x) const {
    Matrix z(layers_[layer].out, x.cols());
    z.noalias() = weights(layer) * x;
    z.colwise() += bias(layer);
    return z;
  }

  static void relu(Matrix& m) { m = m.cwiseMax(Scalar(0)); }

  static void relu_backward(Matrix& d, const Matrix& activation) {
    d = (activation.array() > Scalar(0)).select(d, Scalar(0));
  }

  // Accumulates dW, db for `layer` and returns the gradient w.r.t. its input.
  Matrix backward_linear(std::size_t layer, const Matrix& dout, const Matrix& input,
                         std::span<Scalar> grad) const {
    const auto& l = layers_[layer];
    MatrixMap dw(grad.data() + l.weight_offset, l.out, l.in);
    VectorMap db(grad.data() + l.bias_offset, l.out);
    dw.noalias() += dout * input.transpose();
    db += dout.rowwise().sum();
    Matrix din(l.in, dout.cols());
    din.noalias() = weights(layer).transpose() * dout;
    return din;
  }

  void build_layout() {
    if (shape_.input < 1 || shape_.branch < 1 || shape_.actions < 1)
      throw std::invalid_argument("invalid network shape");
    layers_.clear();
    std::size_t offset = 0;
    auto add = [&](int in, int out) {
      if (out < 1) throw std::invalid_argument("invalid network shape");
      Layer l{in, out, offset, offset + static_cast<std::size_t>(in) * out};
      offset = l.bias_offset + out;
      layers_.push_back(l);
    };
    int width = shape_.input;
    for (int w : shape_.shared) {
      add(width, w);
      width = w;
    }
    add(width, shape_.branch);          // value hidden
    add(shape_.branch, 1);              // value head
    add(width, shape_.branch);          // advantage hidden
    add(shape_.branch, shape_.actions); // advantage head
    params_.assign(offset, Scalar(0));
    moments_.first.assign(offset, Scalar(0));
    moments_.second.assign(offset, Scalar(0));
    moments_.step = 0;
  }

  void initialize(std::uint64_t seed) {
    auto rng = make_rng(seed, Stream::Init);
    for (const auto& l : layers_) {
      const double limit = std::sqrt(6.0 / (l.in + l.out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::size_t i = 0; i < static_cast<std::size_t>(l.in) * l.out; ++i)
        params_[l.weight_offset + i] = static_cast<Scalar>(dist(rng));
    }
  }

  template <typename>
  friend class DuelingQNet;
  template <typename S>
  friend DuelingQNet<S> read_checkpoint(std::istream&);

  QNetShape shape_;
  std::uint64_t seed_ = 0;
  std::vector<Layer> layers_;
  AlignedVector<Scalar> params_;
  AdamMoments<Scalar> moments_;
};

// One Adam step with bias correction; increments the step counter.
template <typename Scalar>
void adam_step(std::span<Scalar> params, std::span<const Scalar> grad, AdamMoments<Scalar>& m,
               double learning_rate, const AdamSettings& s = {}) {
  if (params.size() != grad.size() || m.first.size() != params.size() ||
      m.second.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  ++m.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(m.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(m.step));
  const Scalar b1 = static_cast<Scalar>(s.beta1), b2 = static_cast<Scalar>(s.beta2);
  const Scalar lr = static_cast<Scalar>(learning_rate / c1);
  const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
  const Scalar eps = static_cast<Scalar>(s.epsilon);
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(params.size());
  Eigen::Map<Arr> p(params.data(), n), m1(m.first.data(), n), m2(m.second.data(), n);
  Eigen::Map<const Arr> g(grad.data(), n);
  m1 = b1 * m1 + (Scalar(1) - b1) * g;
  m2 = b2 * m2 + (Scalar(1) - b2) * g.square();
  p -= lr * m1 / ((m2 * inv_c2).sqrt() + eps);
}

template <typename Scalar>
void adam_step(DuelingQNet<Scalar>& net, std::span<const Scalar> grad, double learning_rate,
               const AdamSettings& s = {}) {
  adam_step(net.parameters(), grad, net.moments(), learning_rate, s);
}

// ---------------------------------------------------------------------------
// Checkpoints: a text header followed by little-endian float32 parameters, then
// the Adam first and second moments, all in layer declaration order.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "rbsched-qnet";

namespace detail {

inline void write_f32(std::ostream& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline float read_f32(std::istream& in) {
  std::uint32_t bits = 0;
  in.read(reinterpret_cast<char*>(&bits), sizeof bits);
  if (!in) throw CheckpointError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

inline std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint header truncated at '" + key + "'");
  if (line.rfind(key + " ", 0) != 0 && line != key)
    throw CheckpointError("checkpoint header: expected '" + key + "', got '" + line + "'");
  return line.size() > key.size() ? line.substr(key.size() + 1) : std::string{};
}

template <typename T>
T parse_number(const std::string& s, const std::string& key) {
  std::istringstream is(s);
  T v{};
  if (!(is >> v)) throw CheckpointError("checkpoint header: bad value for '" + key + "'");
  return v;
}

}  // namespace detail

template <typename Scalar>
void write_checkpoint(std::ostream& out, const DuelingQNet<Scalar>& net) {
  const auto& s = net.shape();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "input " << s.input << '\n';
  out << "shared";
  for (int w : s.shared) out << ' ' << w;
  out << '\n';
  out << "branch " << s.branch << '\n';
  out << "actions " << s.actions << '\n';
  out << "adam_step " << net.moments().step << '\n';
  out << "seed " << net.seed() << '\n';
  out << "params " << net.num_parameters() << '\n';
  out << "data\n";
  for (Scalar v : net.parameters()) detail::write_f32(out, static_cast<float>(v));
  for (Scalar v : net.moments().first) detail::write_f32(out, static_cast<float>(v));
  for (Scalar v : net.moments().second) detail::write_f32(out, static_cast<float>(v));
  if (!out) throw CheckpointError("failed writing checkpoint");
}

template <typename Scalar = float>
DuelingQNet<Scalar> read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("empty checkpoint");
  std::istringstream magic(line);
  std::string word;
  int version = 0;
  if (!(magic >> word >> version) || word != kCheckpointMagic)
    throw CheckpointError("not a checkpoint (bad magic)");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  QNetShape shape;
  shape.input = detail::parse_number<int>(detail::expect_line(in, "input"), "input");
  {
    std::istringstream ws(detail::expect_line(in, "shared"));
    shape.shared.clear();
    int w = 0;
    while (ws >> w) shape.shared.push_back(w);
  }
  shape.branch = detail::parse_number<int>(detail::expect_line(in, "branch"), "branch");
  shape.actions = detail::parse_number<int>(detail::expect_line(in, "actions"), "actions");
  const auto step = detail::parse_number<std::int64_t>(detail::expect_line(in, "adam_step"), "adam_step");
  const auto seed = detail::parse_number<std::uint64_t>(detail::expect_line(in, "seed"), "seed");
  const auto count = detail::parse_number<std::size_t>(detail::expect_line(in, "params"), "params");
  detail::expect_line(in, "data");

  DuelingQNet<Scalar> net;
  net.shape_ = shape;
  net.seed_ = seed;
  try {
    net.build_layout();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint shape: ") + e.what());
  }
  if (net.num_parameters() != count)
    throw CheckpointError("checkpoint parameter count " + std::to_string(count) +
                          " does not match its layer shapes (" +
                          std::to_string(net.num_parameters()) + ")");
  for (auto& v : net.params_) v = static_cast<Scalar>(detail::read_f32(in));
  for (auto& v : net.moments_.first) v = static_cast<Scalar>(detail::read_f32(in));
  for (auto& v : net.moments_.second) v = static_cast<Scalar>(detail::read_f32(in));
  net.moments_.step = step;
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint data");
  return net;
}

template <typename Scalar>
std::string serialize(const DuelingQNet<Scalar>& net) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, net);
  return out.str();
}

template <typename Scalar = float>
DuelingQNet<Scalar> deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_checkpoint<Scalar>(in);
}

}  // namespace rbsched
