#include "engen/losses.hpp"

#include <cmath>

namespace engen {

double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps)
        throw UsageError("lr_at: step out of [0, total_steps]");
    if (step <= cfg.warmup_steps)
        return cfg.peak_lr * double(step) / double(cfg.warmup_steps);
    return cfg.peak_lr * double(cfg.total_steps - step) /
           double(cfg.total_steps - cfg.warmup_steps);
}

double loss_total(double l_ce, double l_mel, double l_gan, const TrainConfig& cfg) {
    return cfg.alpha * l_ce + cfg.beta * l_mel + cfg.gamma * l_gan;
}

double loss_ce(const Tensor<float>& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2 || size_t(logits.dim(0)) != targets.size())
        throw DataError("loss_ce: logits/targets length mismatch");
    std::vector<uint8_t> mask(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) mask[i] = targets[i] != kPadToken;
    Graph<float> g(false);
    return double(g.scalar_value(g.cross_entropy_mean(g.constant(logits), targets, mask)));
}

double loss_mel(const MelSpectrogram& pred, const MelSpectrogram& target) {
    if (!pred.frames.same_shape(target.frames)) throw DataError("loss_mel: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred.frames.data.size(); ++i)
        acc += std::abs(double(pred.frames.data[i]) - double(target.frames.data[i]));
    return acc / double(std::max<size_t>(1, pred.frames.data.size()));
}

double loss_gan_generator(double d_out, const Waveform& pred, const Waveform& ref) {
    if (d_out <= 0.0) throw DataError("loss_gan_generator: discriminator output must be > 0");
    size_t n = std::min(pred.samples.size(), ref.samples.size());
    if (n == 0) throw DataError("loss_gan_generator: empty waveform");
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i)
        acc += std::abs(double(pred.samples[i]) - double(ref.samples[i]));
    return -std::log(d_out) + acc / double(n);
}

double discriminator_loss(double d_real, double d_fake) {
    auto clamp01 = [](double x) { return std::min(std::max(x, 1e-7), 1.0 - 1e-7); };
    return -std::log(clamp01(d_real)) - std::log(1.0 - clamp01(d_fake));
}

} // namespace engen
