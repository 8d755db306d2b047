#include "tensor.hpp"

#include <cassert>
#include <stdexcept>

#include "errors.hpp"

namespace neuroflux {

namespace {
thread_local MemoryMeter* tl_active_meter = nullptr;
}

namespace detail {
MemoryMeter* active_meter() { return tl_active_meter; }
}

void MemoryMeter::add(uint64_t bytes) {
  live_ += bytes;
  if (live_ > peak_) peak_ = live_;
  for (auto& w : windows_)
    if (live_ > w) w = live_;
}

void MemoryMeter::release(uint64_t bytes) {
  assert(bytes <= live_);
  live_ -= bytes;
}

int MemoryMeter::open_window() {
  windows_.push_back(live_);
  return static_cast<int>(windows_.size()) - 1;
}

uint64_t MemoryMeter::window_peak(int id) const {
  return windows_.at(static_cast<size_t>(id));
}

void MemoryMeter::close_window(int id) {
  assert(id == static_cast<int>(windows_.size()) - 1 && "windows close LIFO");
  windows_.resize(static_cast<size_t>(id));
}

meter_guard::meter_guard(MemoryMeter& m) : prev_(tl_active_meter) {
  tl_active_meter = &m;
}

meter_guard::~meter_guard() { tl_active_meter = prev_; }

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw input_error("tensor shape dims must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)),
      data_(static_cast<size_t>(shape_numel(shape_)), 0.0f) {
  capture_active_meter();
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw input_error("tensor shape does not match value count");
  capture_active_meter();
}

Tensor::Tensor(const Tensor& other) : shape_(other.shape_), data_(other.data_) {
  capture_active_meter();
}

Tensor& Tensor::operator=(const Tensor& other) {
  if (this == &other) return *this;
  drop_charge();
  shape_ = other.shape_;
  data_ = other.data_;
  capture_active_meter();
  return *this;
}

Tensor::Tensor(Tensor&& other) noexcept
    : shape_(std::move(other.shape_)),
      data_(std::move(other.data_)),
      meter_(other.meter_) {
  other.meter_ = nullptr;
  other.shape_.clear();
  other.data_.clear();
}

Tensor& Tensor::operator=(Tensor&& other) noexcept {
  if (this == &other) return *this;
  drop_charge();
  shape_ = std::move(other.shape_);
  data_ = std::move(other.data_);
  meter_ = other.meter_;
  other.meter_ = nullptr;
  other.shape_.clear();
  other.data_.clear();
  return *this;
}

Tensor::~Tensor() { drop_charge(); }

Tensor Tensor::reshaped(std::vector<int> new_shape) && {
  if (shape_numel(new_shape) != numel())
    throw input_error("reshape: element count mismatch");
  Tensor out(std::move(*this));
  out.shape_ = std::move(new_shape);
  return out;
}

void Tensor::register_with(MemoryMeter& m) {
  if (meter_ == &m) return;
  drop_charge();
  meter_ = &m;
  meter_->add(bytes());
}

void Tensor::release_meter() { drop_charge(); }

void Tensor::capture_active_meter() {
  meter_ = tl_active_meter;
  if (meter_) meter_->add(bytes());
}

void Tensor::drop_charge() noexcept {
  if (meter_) {
    meter_->release(bytes());
    meter_ = nullptr;
  }
}

Tensor tensor_alloc(const std::vector<int>& shape, MemoryMeter& meter) {
  meter_guard guard(meter);
  return Tensor(shape);
}

IntBuffer::IntBuffer(size_t n) : v_(n, 0) { capture_active_meter(); }

IntBuffer::IntBuffer(const IntBuffer& other) : v_(other.v_) {
  capture_active_meter();
}

IntBuffer& IntBuffer::operator=(const IntBuffer& other) {
  if (this == &other) return *this;
  drop_charge();
  v_ = other.v_;
  capture_active_meter();
  return *this;
}

IntBuffer::IntBuffer(IntBuffer&& other) noexcept
    : v_(std::move(other.v_)), meter_(other.meter_) {
  other.meter_ = nullptr;
  other.v_.clear();
}

IntBuffer& IntBuffer::operator=(IntBuffer&& other) noexcept {
  if (this == &other) return *this;
  drop_charge();
  v_ = std::move(other.v_);
  meter_ = other.meter_;
  other.meter_ = nullptr;
  other.v_.clear();
  return *this;
}

IntBuffer::~IntBuffer() { drop_charge(); }

void IntBuffer::capture_active_meter() {
  meter_ = tl_active_meter;
  if (meter_) meter_->add(static_cast<uint64_t>(v_.size()) * 4);
}

void IntBuffer::drop_charge() noexcept {
  if (meter_) {
    meter_->release(static_cast<uint64_t>(v_.size()) * 4);
    meter_ = nullptr;
  }
}

}  // namespace neuroflux
