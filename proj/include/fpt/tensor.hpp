#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace fpt {

// Tracks payload bytes of live tensor buffers (data + grad). Allocator
// overhead and non-tensor scratch are deliberately out of scope.
class MemoryLedger {
 public:
  static MemoryLedger& instance();

  void on_alloc(int64_t bytes);
  void on_free(int64_t bytes);

  int64_t live_bytes() const { return live_; }
  int64_t peak_bytes() const { return peak_; }
  void reset_peak() { peak_ = live_; }

  void set_logging(bool on) { logging_ = on; }
  void log_event(const std::string& tag, int64_t delta);
  const std::vector<std::pair<std::string, int64_t>>& events() const { return events_; }
  void clear_events() { events_.clear(); }

 private:
  int64_t live_ = 0;
  int64_t peak_ = 0;
  bool logging_ = false;
  std::vector<std::pair<std::string, int64_t>> events_;
};

// (live_bytes, peak_bytes)
std::pair<int64_t, int64_t> ledger_snapshot();

// Ledger-registered float buffer. Move-only.
class Buffer {
 public:
  Buffer() = default;
  explicit Buffer(int64_t n, bool zero = false);
  ~Buffer();
  Buffer(Buffer&& o) noexcept : p_(o.p_), n_(o.n_) { o.p_ = nullptr; o.n_ = 0; }
  Buffer& operator=(Buffer&& o) noexcept;
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;

  float* data() { return p_; }
  const float* data() const { return p_; }
  int64_t size() const { return n_; }
  bool empty() const { return n_ == 0; }

 private:
  float* p_ = nullptr;
  int64_t n_ = 0;
};

struct TensorImpl {
  std::vector<int64_t> shape;
  int64_t numel = 0;
  Buffer data;
  Buffer grad;  // allocated lazily
  bool requires_grad = false;
  int64_t node_id = -1;   // producing graph node, -1 if none
  uint64_t graph_epoch = 0;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor empty(std::vector<int64_t> shape);
  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, float v);
  static Tensor from(std::vector<int64_t> shape, const std::vector<float>& v);
  static Tensor adopt(std::vector<int64_t> shape, Buffer buf);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  int64_t dim(int i) const { return impl_->shape[i]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return impl_->numel; }

  // hand this tensor's data buffer to a new tensor (in-place op plumbing);
  // leaves this tensor hollow (shape/grad intact, data gone)
  Buffer steal_data();

  float* data() { return impl_->data.data(); }
  const float* data() const { return impl_->data.data(); }
  float item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool b);
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  float* grad();              // allocates zeroed buffer on first use
  const float* grad() const;  // null when absent
  void zero_grad();           // frees the grad buffer
  void accumulate_grad(const float* g, int64_t n);

  // autodiff bookkeeping
  bool attached() const;
  int64_t node_id() const { return impl_ ? impl_->node_id : -1; }
  void set_node(int64_t id);

  Tensor clone() const;  // deep copy of data (grad/node not copied)
  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct Node {
  const char* op = "";
  std::vector<Tensor> inputs;
  std::vector<Tensor> saved;
  Tensor output;
  // Reads output grad, accumulates into input grads.
  std::function<void(Node&)> backward;
};

// Global append-only tape. Single-owner; see concurrency notes in README.
class Graph {
 public:
  static Graph& instance();

  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
  uint64_t epoch() const { return epoch_; }
  int64_t push(Node n);
  Node& node(int64_t id) { return nodes_[static_cast<size_t>(id)]; }

  // Reverse sweep from a scalar loss; fills leaf grads, then clears the tape.
  void backward(Tensor loss);
  void clear();

 private:
  std::vector<Node> nodes_;
  bool recording_ = false;
  uint64_t epoch_ = 1;
};

void backward(Tensor loss);

struct NoGradGuard {
  NoGradGuard() : prev_(Graph::instance().recording()) { Graph::instance().set_recording(false); }
  ~NoGradGuard() { Graph::instance().set_recording(prev_); }
  bool prev_;
};

struct RecordGuard {
  RecordGuard() : prev_(Graph::instance().recording()) { Graph::instance().set_recording(true); }
  ~RecordGuard() { Graph::instance().set_recording(prev_); }
  bool prev_;
};

// splitmix64-based deterministic generator with named substreams.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t next_u64();
  double uniform();                       // [0,1)
  double uniform(double a, double b);
  int64_t uniform_int(int64_t n);         // [0,n), unbiased
  double normal();                        // standard normal, Box-Muller
  float trunc_normal(float stddev);       // rejection inside ±2σ
  Rng split(const std::string& name) const;
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

uint64_t fnv1a(const std::string& s);
uint64_t splitmix64_mix(uint64_t x);

}  // namespace fpt
