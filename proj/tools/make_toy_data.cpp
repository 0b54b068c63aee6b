// Generates a small synthetic speech-like corpus (pulse train through a
// resonator, one formant preset per speaker) plus a manifest, so the
// training and synthesis commands can be exercised without real recordings.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "engen/audio_io.hpp"
#include "engen/common.hpp"

using namespace engen;

namespace {

constexpr double kPi = 3.14159265358979323846;

Waveform speaker_signal(double f0, double formant_hz, double duration_s, uint64_t seed) {
    Rng rng(seed);
    Waveform w;
    w.sample_rate = kSampleRate;
    size_t n = size_t(duration_s * kSampleRate);
    std::vector<double> x(n, 0.0);
    double period = kSampleRate / f0;
    for (double t = 0.0; t < double(n); t += period) x[size_t(t)] = 1.0;
    for (size_t i = 0; i < n; ++i) x[i] += 0.02 * rng.normal();
    double r = 0.97, theta = 2.0 * kPi * formant_hz / kSampleRate;
    double a1 = 2.0 * r * std::cos(theta), a2 = -r * r;
    std::vector<double> y(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        double acc = x[i];
        if (i >= 1) acc += a1 * y[i - 1];
        if (i >= 2) acc += a2 * y[i - 2];
        y[i] = acc;
    }
    double peak = 1e-9;
    for (double v : y) peak = std::max(peak, std::abs(v));
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) w.samples[i] = float(0.8 * y[i] / peak);
    return w;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"generate a synthetic toy corpus + manifest for engen"};
    std::string out_dir = "toy_data";
    int per_speaker = 4;
    double duration = 3.0;
    uint64_t seed = 1;
    app.add_option("--out-dir", out_dir, "output directory");
    app.add_option("--per-speaker", per_speaker, "utterances per speaker (2 speakers)");
    app.add_option("--duration", duration, "seconds per utterance");
    app.add_option("--seed", seed, "rng seed");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::string> phrases = {
        "selamat pagi dunia",
        "suara ini dibuat dari nada sintetis",
        "nomor urut berikutnya segera datang",
        "kalimat panjang dengan banyak kata untuk melatih model bahasa",
        "apa kabar semua orang di sini",
        "rekaman terakhir dari pembicara ini",
    };
    try {
        std::filesystem::create_directories(out_dir);
        std::ofstream manifest(out_dir + "/manifest.tsv");
        if (!manifest) throw DataError("cannot write manifest in " + out_dir);
        int idx = 0;
        for (int spk = 0; spk < 2; ++spk) {
            double f0 = spk == 0 ? 115.0 : 180.0;
            double formant = spk == 0 ? 850.0 : 1500.0;
            for (int u = 0; u < per_speaker; ++u, ++idx) {
                Waveform w = speaker_signal(f0 + 3.0 * u, formant + 40.0 * u, duration,
                                            seed + uint64_t(idx));
                std::string name = "spk" + std::to_string(spk) + "_utt" + std::to_string(u) +
                                   ".wav";
                save_wav(out_dir + "/" + name, w);
                manifest << out_dir << "/" << name << "\tspk" << spk << "\t" << duration << "\t"
                         << phrases[size_t(idx) % phrases.size()] << "\n";
            }
        }
        std::printf("wrote %d wavs + manifest.tsv under %s\n", idx, out_dir.c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
