#pragma once

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "latgp/errors.hpp"

namespace latgp {

namespace detail {

/// Thread-local SIMD-aligned scratch, one buffer per transform size.
/// Transforms run on these so plans keep their aligned fast paths while
/// callers pass ordinary vectors.
inline fftw_complex* aligned_scratch(std::size_t n) {
    struct Buf {
        fftw_complex* p = nullptr;
        std::size_t n = 0;
        ~Buf() {
            if (p) fftw_free(p);
        }
    };
    thread_local std::unordered_map<std::size_t, Buf> buffers;
    Buf& buf = buffers[n];
    if (!buf.p) {
        buf.p = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
        if (!buf.p) throw std::bad_alloc();
        buf.n = n;
    }
    return buf.p;
}

}  // namespace detail

/// Two-dimensional complex-to-complex FFT for a fixed (rows, cols) shape.
///
/// Convention: forward() is the unnormalized DFT; inverse() carries the 1/N
/// factor, so inverse(forward(x)) == x. Plans are created once per shape
/// (planner access serialized) with measured heuristics and executed on
/// aligned thread-local scratch, so concurrent calls on distinct vectors
/// are safe.
class Fft2 {
public:
    Fft2(int rows, int cols) : rows_(rows), cols_(cols) {
        if (rows < 1 || cols < 1) throw DimensionError("Fft2: non-positive shape");
        std::lock_guard<std::mutex> lock(planner_mutex());
        auto* probe = static_cast<fftw_complex*>(
            fftw_malloc(sizeof(fftw_complex) * size()));
        if (!probe) throw std::bad_alloc();
        // Measured plans amortize over the many transforms per shape; very
        // large shapes fall back to estimated plans to bound startup cost.
        const unsigned flags = size() <= (1u << 21) ? FFTW_MEASURE : FFTW_ESTIMATE;
        forward_plan_ = fftw_plan_dft_2d(rows, cols, probe, probe, FFTW_FORWARD, flags);
        backward_plan_ =
            fftw_plan_dft_2d(rows, cols, probe, probe, FFTW_BACKWARD, flags);
        fftw_free(probe);
        if (!forward_plan_ || !backward_plan_) throw Error("Fft2: plan creation failed");
    }

    ~Fft2() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(forward_plan_);
        fftw_destroy_plan(backward_plan_);
    }

    Fft2(const Fft2&) = delete;
    Fft2& operator=(const Fft2&) = delete;

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return static_cast<std::size_t>(rows_) * cols_; }

    void forward(std::vector<std::complex<double>>& inout) const {
        execute(forward_plan_, inout);
    }

    void inverse(std::vector<std::complex<double>>& inout) const {
        execute(backward_plan_, inout);
        const double scale = 1.0 / static_cast<double>(size());
        for (auto& v : inout) v *= scale;
    }

    /// Backward transform without the 1/N normalization.
    void backward_raw(std::vector<std::complex<double>>& inout) const {
        execute(backward_plan_, inout);
    }

private:
    static std::mutex& planner_mutex() {
        static std::mutex m;
        return m;
    }

    void execute(fftw_plan plan, std::vector<std::complex<double>>& inout) const {
        if (inout.size() != size()) throw DimensionError("Fft2: buffer size mismatch");
        fftw_complex* buf = detail::aligned_scratch(size());
        std::memcpy(buf, inout.data(), sizeof(fftw_complex) * size());
        fftw_execute_dft(plan, buf, buf);
        std::memcpy(inout.data(), buf, sizeof(fftw_complex) * size());
    }

    int rows_, cols_;
    fftw_plan forward_plan_, backward_plan_;
};

/// Shared plan per shape; reused across all operations on that shape.
inline std::shared_ptr<const Fft2> fft_plan(int rows, int cols) {
    static std::mutex cache_mutex;
    static std::map<std::pair<int, int>, std::weak_ptr<const Fft2>> cache;
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto key = std::make_pair(rows, cols);
    if (auto it = cache.find(key); it != cache.end()) {
        if (auto plan = it->second.lock()) return plan;
    }
    auto plan = std::make_shared<const Fft2>(rows, cols);
    cache[key] = plan;
    return plan;
}

}  // namespace latgp
