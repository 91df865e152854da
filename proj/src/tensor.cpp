#include "fpt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
namespace {
// Activation buffers in the tens of MB turn over every layer; stop glibc from
// serving them as mmap/munmap cycles, which re-fault zeroed pages each time.
struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  }
} g_malloc_tuning;
}  // namespace
#endif

namespace fpt {

MemoryLedger& MemoryLedger::instance() {
  static MemoryLedger ledger;
  return ledger;
}

void MemoryLedger::on_alloc(int64_t bytes) {
  live_ += bytes;
  if (live_ > peak_) peak_ = live_;
}

void MemoryLedger::on_free(int64_t bytes) { live_ -= bytes; }

void MemoryLedger::log_event(const std::string& tag, int64_t delta) {
  if (logging_) events_.emplace_back(tag, delta);
}

std::pair<int64_t, int64_t> ledger_snapshot() {
  auto& l = MemoryLedger::instance();
  return {l.live_bytes(), l.peak_bytes()};
}

Buffer::Buffer(int64_t n, bool zero) : n_(n) {
  if (n < 0) throw std::invalid_argument("Buffer: negative size");
  if (n == 0) return;
  p_ = static_cast<float*>(::operator new(static_cast<size_t>(n) * sizeof(float)));
  if (zero) std::memset(p_, 0, static_cast<size_t>(n) * sizeof(float));
  MemoryLedger::instance().on_alloc(n_ * 4);
}

Buffer::~Buffer() {
  if (p_) {
    ::operator delete(p_);
    MemoryLedger::instance().on_free(n_ * 4);
  }
}

Buffer& Buffer::operator=(Buffer&& o) noexcept {
  if (this != &o) {
    if (p_) {
      ::operator delete(p_);
      MemoryLedger::instance().on_free(n_ * 4);
    }
    p_ = o.p_;
    n_ = o.n_;
    o.p_ = nullptr;
    o.n_ = 0;
  }
  return *this;
}

static int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive extent");
    n *= d;
  }
  return n;
}

Tensor Tensor::empty(std::vector<int64_t> shape) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  int64_t n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->numel = n;
  t.impl_->data = Buffer(n, false);
  return t;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  int64_t n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->numel = n;
  t.impl_->data = Buffer(n, true);
  return t;
}

Buffer Tensor::steal_data() { return std::move(impl_->data); }

Tensor Tensor::adopt(std::vector<int64_t> shape, Buffer buf) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  int64_t n = shape_numel(shape);
  if (n != buf.size()) throw std::invalid_argument("Tensor::adopt: buffer size mismatch");
  t.impl_->shape = std::move(shape);
  t.impl_->numel = n;
  t.impl_->data = std::move(buf);
  return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, float v) {
  Tensor t = Tensor::empty(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = v;
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, const std::vector<float>& v) {
  Tensor t = Tensor::empty(std::move(shape));
  if (static_cast<int64_t>(v.size()) != t.numel())
    throw std::invalid_argument("Tensor::from: value count does not match shape");
  std::memcpy(t.data(), v.data(), v.size() * sizeof(float));
  return t;
}

float Tensor::item() const {
  if (!impl_ || numel() != 1) throw std::logic_error("Tensor::item: not a scalar");
  return data()[0];
}

Tensor& Tensor::set_requires_grad(bool b) {
  impl_->requires_grad = b;
  return *this;
}

float* Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad = Buffer(numel(), true);
  return impl_->grad.data();
}

const float* Tensor::grad() const {
  return impl_->grad.empty() ? nullptr : impl_->grad.data();
}

void Tensor::zero_grad() { impl_->grad = Buffer(); }

void Tensor::accumulate_grad(const float* g, int64_t n) {
  float* dst = grad();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

bool Tensor::attached() const {
  return impl_ && impl_->node_id >= 0 && impl_->graph_epoch == Graph::instance().epoch();
}

void Tensor::set_node(int64_t id) {
  impl_->node_id = id;
  impl_->graph_epoch = Graph::instance().epoch();
}

Tensor Tensor::clone() const {
  Tensor t = Tensor::empty(impl_->shape);
  std::memcpy(t.data(), data(), static_cast<size_t>(numel()) * sizeof(float));
  return t;
}

Graph& Graph::instance() {
  static Graph g;
  return g;
}

int64_t Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  int64_t id = static_cast<int64_t>(nodes_.size()) - 1;
  nodes_.back().output.set_node(id);
  return id;
}

void Graph::backward(Tensor loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::logic_error("backward: loss must be a defined scalar");
  if (!loss.attached())
    throw std::logic_error("backward: loss is detached from the current graph");
  loss.grad()[0] = 1.0f;
  for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.output.has_grad()) continue;  // no contribution to the loss
    n.backward(n);
    // op outputs are intermediates; their grads are transient
    if (n.output.node_id() == i) n.output.zero_grad();
  }
  clear();
}

void Graph::clear() {
  nodes_.clear();
  ++epoch_;
}

void backward(Tensor loss) { Graph::instance().backward(std::move(loss)); }

uint64_t splitmix64_mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t x = state_;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

float Rng::trunc_normal(float stddev) {
  for (;;) {
    double z = normal();
    if (z >= -2.0 && z <= 2.0) return static_cast<float>(z * stddev);
  }
}

Rng Rng::split(const std::string& name) const {
  return Rng(splitmix64_mix(seed_ ^ fnv1a(name)));
}

}  // namespace fpt
