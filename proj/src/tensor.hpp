#pragma once

#include <cstdint>
#include <type_traits>
#include <utility>
#include <vector>

namespace neuroflux {

class MemoryMeter;

namespace detail {
MemoryMeter* active_meter();
}

/**
 * Deterministic byte accounting for live tensors.
 *
 * Accounting is exact by contract: 4 bytes per element, no allocator slack,
 * no alignment padding. live_bytes rises and falls with registrations;
 * peak_bytes is the high-water mark and never decreases.
 */
class MemoryMeter {
public:
  void add(uint64_t bytes);
  void release(uint64_t bytes);

  uint64_t live_bytes() const { return live_; }
  uint64_t peak_bytes() const { return peak_; }

  // Opens an observation window; window_peak(id) reports the maximum of
  // live_bytes between open and now. Windows nest.
  int open_window();
  uint64_t window_peak(int id) const;
  void close_window(int id);

private:
  uint64_t live_ = 0;
  uint64_t peak_ = 0;
  std::vector<uint64_t> windows_;
};

// Makes one meter the implicit recipient of every tensor allocated on this
// thread for the guard's lifetime. Restores the previous meter on exit.
class meter_guard {
public:
  explicit meter_guard(MemoryMeter& m);
  ~meter_guard();
  meter_guard(const meter_guard&) = delete;
  meter_guard& operator=(const meter_guard&) = delete;

private:
  MemoryMeter* prev_;
};

/**
 * Dense float32 tensor, row-major.
 *
 * If a meter is active when a tensor is created (or copied into existence),
 * the tensor registers 4 * numel bytes and releases them on destruction.
 * Long-lived tensors such as parameters are created unmetered and moved on
 * and off a meter explicitly via register_with / release_meter, which is how
 * load-to-device and back-to-storage transitions are modeled.
 */
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> values);

  Tensor(const Tensor& other);
  Tensor& operator=(const Tensor& other);
  Tensor(Tensor&& other) noexcept;
  Tensor& operator=(Tensor&& other) noexcept;
  ~Tensor();

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  uint64_t bytes() const { return static_cast<uint64_t>(data_.size()) * 4; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Explicit residency control for tensors that outlive any single scope.
  void register_with(MemoryMeter& m);
  void release_meter();
  bool metered() const { return meter_ != nullptr; }

  // Same storage and meter charge under a new shape header.
  Tensor reshaped(std::vector<int> new_shape) &&;

private:
  void capture_active_meter();
  void drop_charge() noexcept;

  std::vector<int> shape_;
  std::vector<float> data_;
  MemoryMeter* meter_ = nullptr;
};

// Metered int32 buffer for pooling argmax contexts; same 4 bytes/element
// accounting as Tensor.
class IntBuffer {
public:
  IntBuffer() = default;
  explicit IntBuffer(size_t n);
  IntBuffer(const IntBuffer& other);
  IntBuffer& operator=(const IntBuffer& other);
  IntBuffer(IntBuffer&& other) noexcept;
  IntBuffer& operator=(IntBuffer&& other) noexcept;
  ~IntBuffer();

  size_t size() const { return v_.size(); }
  int32_t* data() { return v_.data(); }
  const int32_t* data() const { return v_.data(); }
  int32_t& operator[](size_t i) { return v_[i]; }
  int32_t operator[](size_t i) const { return v_[i]; }

private:
  void capture_active_meter();
  void drop_charge() noexcept;

  std::vector<int32_t> v_;
  MemoryMeter* meter_ = nullptr;
};

int64_t shape_numel(const std::vector<int>& shape);

// Allocates a zeroed tensor registered with an explicit meter regardless of
// what is active on the thread.
Tensor tensor_alloc(const std::vector<int>& shape, MemoryMeter& meter);

/**
 * Runs fn with meter active and returns {result, peak live bytes observed
 * while fn ran}. live_bytes returns to its entry value once everything fn
 * allocated has been destroyed; the scope itself retains nothing.
 */
template <typename F>
auto meter_scope(MemoryMeter& meter, F&& fn)
    -> std::pair<std::invoke_result_t<F&>, uint64_t> {
  int w = meter.open_window();
  meter_guard guard(meter);
  auto result = fn();
  uint64_t peak = meter.window_peak(w);
  meter.close_window(w);
  return {std::move(result), peak};
}

}  // namespace neuroflux
