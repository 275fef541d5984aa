#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "favae/cat.hpp"
#include "favae/datasets.hpp"
#include "favae/images.hpp"
#include "favae/model.hpp"
#include "favae/optim.hpp"

namespace favae::harness {

// Flat key=value text with [section] headers and '#' comments. Every key has a
// default; unknown keys and malformed lines are usage errors.
class Config {
   public:
    static Config defaults();
    static Config parse(const std::string& text);
    static Config load(const std::filesystem::path& path);

    // key is "section.name".
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_ints(const std::string& key) const;

    // Every key in fixed order; parse(text()) reproduces the config.
    std::string text() const;

   private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

struct CatSettings {
    cat::CatSpec spec;  // vocab, context and cond_vocab come from the FA-VAE run
    int steps = 2000;
    int batch = 16;
    double lr = 1e-3;
    int log_every = 50;
    double temperature = 1.0;
    int top_k = 0;
    int samples_per_class = 64;
    std::filesystem::path captions;
};

struct RunConfig {
    std::uint64_t seed = 0;
    int steps = 3000;
    int batch = 8;
    int log_every = 50;
    int image_every = 500;
    int eval_count = 16;
    AdamOptions adam{.lr = 2e-3};

    data::Kind kind = data::Kind::checker_mix;
    int n = 64;
    int size = 32;
    std::filesystem::path dir;
    std::uint64_t data_seed = 1234;
    std::uint64_t eval_seed = 99;

    model::ModelSpec model;
    CatSettings cat;
    // Resolved config text, written to the run directory.
    std::string text;

    static RunConfig from(const Config& config);
};

// Training images and held-out images. A PGM/PPM directory has no separate
// held-out split, so its first eval_count images serve as the evaluation batch.
std::pair<data::Dataset, data::Dataset> make_datasets(const RunConfig& run);

struct Evaluation {
    double psnr = 0;
    spectral::BandValues band_error{};
};

// PSNR on 8-bit quantized images and the radial band-energy error of the
// reconstructions, over the whole held-out set.
Evaluation evaluate(const model::Model<float>& model, const data::Dataset& eval);
double psnr_u8(std::span<const float> a, std::span<const float> b);

std::vector<std::string> metrics_header(const model::ModelSpec& spec);
std::string metrics_row(const model::StepMetrics& m, const Evaluation& e);

struct TrainResult {
    std::vector<model::StepMetrics> steps;
    Evaluation final_eval;
    std::filesystem::path checkpoint;
};

// Trains for run.steps steps (continuing from `resume` if given), writing
// config.txt, metrics.csv, a checkpoint, reconstruction grids and frequency
// maps under out. Throws NumericError after saving the last finite state.
TrainResult train_favae(const RunConfig& run, const std::filesystem::path& out, const std::filesystem::path& resume = {});

struct CatResult {
    std::vector<double> nll;  // per step
    std::vector<std::vector<double>> histograms;  // sampled index counts per class
    double js = 0;  // between the first two classes
    std::filesystem::path checkpoint;
};

// Encodes the dataset with a frozen FA-VAE checkpoint, trains the transformer
// on the index sequences conditioned on image labels, then samples per class
// and decodes the samples to images.
CatResult train_cat(const RunConfig& run, const std::filesystem::path& favae_checkpoint, const std::filesystem::path& out);

// Spectrum images for an image (and, with a model, its reconstruction and the
// per-level encoder and complement maps), written as PGM files. Returns the paths.
std::vector<std::filesystem::path> write_freq_maps(const images::Image& image, const model::Model<float>* model,
                                                   const std::filesystem::path& out);

struct Reconstruction {
    double psnr = 0;
    std::filesystem::path grid;
};

Reconstruction reconstruct(const model::Model<float>& model, const data::Dataset& images, const std::filesystem::path& out);

struct GradcheckLine {
    std::string scope;
    std::string op;
    double max_rel_error = 0;
    bool pass = false;
};

// Double precision gradient checks over the named scope ("spectral", "vq",
// "favae", "cat" or "all"); a line fails at relative error >= threshold.
std::vector<GradcheckLine> gradcheck_battery(const std::string& scope, double threshold = 1e-4);

}  // namespace favae::harness
