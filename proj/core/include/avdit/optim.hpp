#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "avdit/autodiff.hpp"
#include "avdit/random.hpp"
#include "avdit/tensor_io.hpp"

namespace avdit {

/// Owns every trainable parameter of a model, in registration order.
/// Parameter addresses are stable for the lifetime of the store.
class ParamStore {
   public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Parameter<float>& add(const std::string& name, Tensor<float> init);
    Parameter<float>* find(const std::string& name);
    const Parameter<float>* find(const std::string& name) const;
    Parameter<float>& at(const std::string& name);

    std::size_t size() const noexcept { return params_.size(); }
    std::size_t numel() const;

    template <typename F>
    void for_each(F&& f) {
        for (auto& p : params_) f(*p);
    }
    template <typename F>
    void for_each(F&& f) const {
        for (const auto& p : params_) f(static_cast<const Parameter<float>&>(*p));
    }

    void zero_grad();
    /// Scales every gradient so that the global L2 norm is at most max_norm.
    /// Returns the norm before clipping.
    double clip_grad_norm(double max_norm);

    Checkpoint to_checkpoint() const;
    /// Copies values by name. Missing names are errors unless allow_missing.
    /// Returns the number of tensors loaded.
    std::size_t load(const Checkpoint& ckpt, bool allow_missing = false);

   private:
    std::vector<std::unique_ptr<Parameter<float>>> params_;
    std::map<std::string, Parameter<float>*> by_name_;
};

/// Random initializers used by the model code.
Tensor<float> normal_init(Shape shape, double stddev, Rng& rng);
Tensor<float> xavier_init(std::size_t fan_in, std::size_t fan_out, Shape shape, Rng& rng);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW)
};

/// Per-parameter moment estimates.
struct AdamState {
    std::map<const Parameter<float>*, std::pair<Tensor<float>, Tensor<float>>> moments;
    long step = 0;
};

/// One AdamW update over every parameter with a gradient.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg, double lr);

/// Linear warmup 0 -> peak over `warmup_steps`, then linear decay to 0 at `total_steps`.
double lr_schedule(long step, long warmup_steps, double peak_lr, long total_steps);

}  // namespace avdit
