#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avdit/dit.hpp"
#include "avdit/random.hpp"

namespace avdit {

struct GuidanceScales {
    double text = 5.0;
    double video = 2.0;

    void validate() const;
    bool is_zero() const noexcept { return text == 0.0 && video == 0.0; }
    bool operator==(const GuidanceScales&) const = default;
};

/// Parses "S_TEXT,S_VIDEO".
GuidanceScales parse_scales(const std::string& text);

struct SamplerConfig {
    int n_steps = 32;
    double sway_coeff = -1.0;
    double ema_decay = 0.999;
    bool use_ema = true;

    void validate() const;
};

/// t_i = u + s (cos(pi u / 2) - 1 + u) at u = i / n, i = 0..n. Endpoints are exact.
std::vector<double> sway_schedule(int n_steps, double s);

/// Multimodal guidance over the full, text-only (video nulled) and
/// unconditional field predictions, evaluated as
///   v_full + s_text (v_full - v_uncond) + (s_video - s_text) (v_full - v_text_only)
/// so equal scales reduce bit-exactly to the single-scale form.
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& v_full, const Tensor<T>& v_text_only, const Tensor<T>& v_uncond,
                      const GuidanceScales& s);

enum class Branch { full, text_only, uncond };

/// Anything that predicts a velocity for state x at time t.
class VelocityField {
   public:
    virtual ~VelocityField() = default;
    virtual Tensor<double> velocity(const Tensor<double>& x, double t, Branch branch) = 0;
};

/// Reference rows (mask 0) are pinned to (1 - t) noise + t reference after each step.
struct InpaintContext {
    Tensor<double> reference;  // [T x C]; only mask-0 rows are read
    TemporalMask mask;
};

/// Euler integration of the guided field from Gaussian noise at t=0 to t=1.
Tensor<double> sample(VelocityField& field, Shape shape, const GuidanceScales& scales, const SamplerConfig& cfg,
                      Rng& rng, const std::optional<InpaintContext>& context = std::nullopt);

/// Velocity field backed by a trained model and fixed conditioning inputs.
/// Each branch's condition is encoded once and reused for every step.
class ModelField final : public VelocityField {
   public:
    ModelField(const AvDiT& model, ConditionInputs inputs);
    Tensor<double> velocity(const Tensor<double>& x, double t, Branch branch) override;
    std::size_t forward_count(Branch b) const { return counts_.at(static_cast<int>(b)); }

   private:
    const AvDiT& model_;
    ConditionInputs inputs_;
    std::map<int, FrozenCondition> frozen_;
    std::map<int, std::size_t> counts_{{0, 0}, {1, 0}, {2, 0}};
};

/// Shadow copy of every parameter, updated as ema = decay ema + (1 - decay) w.
class Ema {
   public:
    Ema() = default;
    explicit Ema(const ParamStore& params);

    void update(const ParamStore& params, double decay);
    /// Exchanges shadow and live values (call twice to restore).
    void swap(ParamStore& params);
    void copy_to(ParamStore& params) const;

    const std::map<std::string, Tensor<float>>& shadow() const noexcept { return shadow_; }
    std::map<std::string, Tensor<float>>& shadow() noexcept { return shadow_; }

   private:
    std::map<std::string, Tensor<float>> shadow_;
};

}  // namespace avdit
