#include "favae/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>

#include "favae/checkpoint.hpp"
#include "favae/error.hpp"
#include "favae/ops.hpp"
#include "favae/spectral.hpp"

namespace favae::harness {

namespace fs = std::filesystem;

namespace {

constexpr int kEvalChunk = 16;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<int> range(int begin, int end) {
    std::vector<int> v(end - begin);
    std::iota(v.begin(), v.end(), begin);
    return v;
}

// Reconstructions of the whole dataset, float planar like the dataset pixels.
std::vector<float> reconstruct_all(const model::Model<float>& model, const data::Dataset& d) {
    NoGradGuard guard;
    std::vector<float> out;
    out.reserve(d.pixels.size());
    for (int b = 0; b < d.count; b += kEvalChunk) {
        auto idx = range(b, std::min(d.count, b + kEvalChunk));
        auto r = model.forward(d.batch<float>(idx)).reconstruction;
        out.insert(out.end(), r.data().begin(), r.data().end());
    }
    return out;
}

images::Image to_image(std::span<const float> planar, int channels, int size) {
    return images::from_planar(planar.data(), channels, size, size, -1.0f, 1.0f);
}

images::Image map_image(const Tensor<float>& map) {
    return images::from_planar(map.data().data(), 1, static_cast<int>(map.dim(0)), static_cast<int>(map.dim(1)), 0.0f, 1.0f);
}

// Feature map [1, C, h, w] as [C, h, w].
Tensor<float> planes(const Tensor<float>& t) { return ops::reshape(t, {t.dim(1), t.dim(2), t.dim(3)}); }

Tensor<float> image_tensor(const images::Image& image, int channels) {
    std::vector<float> v(std::size_t(channels) * image.height * image.width);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                const int src = image.channels == 1 ? 0 : std::min(c, image.channels - 1);
                v[(std::size_t(c) * image.height + y) * image.width + x] = image.at(y, x, src) / 127.5f - 1.0f;
            }
    return Tensor<float>::from({1, channels, image.height, image.width}, std::move(v));
}

images::Image grid_two_rows(const data::Dataset& d, std::span<const float> recon, int columns) {
    const int n = std::min(d.count, columns);
    std::vector<images::Image> tiles;
    for (int i = 0; i < n; ++i) tiles.push_back(to_image(d.image(i), d.channels, d.size));
    for (int i = 0; i < n; ++i) tiles.push_back(to_image(recon.subspan(i * d.image_numel(), d.image_numel()), d.channels, d.size));
    return images::grid(tiles, n);
}

std::string step_dir(std::uint64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%06llu", static_cast<unsigned long long>(step));
    return buf;
}

}  // namespace

std::pair<data::Dataset, data::Dataset> make_datasets(const RunConfig& run) {
    if (run.kind == data::Kind::pnm_dir) {
        auto train = data::load_pnm_dir(run.dir, run.size, run.n);
        auto eval = train.slice(0, std::min(train.count, run.eval_count));
        return {std::move(train), std::move(eval)};
    }
    return {data::make_dataset(run.kind, run.n, run.size, run.data_seed),
            data::make_dataset(run.kind, run.eval_count, run.size, run.eval_seed)};
}

double psnr_u8(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size() || a.empty()) throw DimensionError("psnr: inputs differ in size");
    auto q = [](float v) { return std::clamp(std::lround((double(v) + 1.0) * 127.5), 0L, 255L); };
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(q(a[i]) - q(b[i]));
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

Evaluation evaluate(const model::Model<float>& model, const data::Dataset& eval) {
    const auto recon = reconstruct_all(model, eval);
    Evaluation e;
    e.psnr = psnr_u8(eval.pixels, recon);
    const Shape shape{eval.count, eval.channels, eval.size, eval.size};
    e.band_error = spectral::band_energy_error(Tensor<float>::from(shape, eval.pixels), Tensor<float>::from(shape, recon));
    return e;
}

std::vector<std::string> metrics_header(const model::ModelSpec& spec) {
    std::vector<std::string> h{"step", "l1", "ffl"};
    const auto levels = spec.fcm_levels();
    for (int i : levels) h.push_back("dsl_" + std::to_string(i));
    h.push_back("lq");
    h.push_back("perplexity");
    const int sigmas = static_cast<int>(levels.size()) * (spec.sigma_mode == spectral::SigmaMode::pairwise ? 2 : 1);
    for (int k = 0; k < sigmas; ++k) h.push_back("sigma_" + std::to_string(k));
    for (const char* c : {"psnr", "band_low", "band_mid", "band_high"}) h.push_back(c);
    return h;
}

std::string metrics_row(const model::StepMetrics& m, const Evaluation& e) {
    std::string row = std::to_string(m.step + 1) + "," + num(m.l1) + "," + num(m.ffl);
    for (auto d : m.dsl) row += "," + num(d);
    row += "," + num(m.quantization) + "," + num(m.perplexity);
    for (auto s : m.sigma) row += "," + num(s);
    row += "," + num(e.psnr);
    for (auto b : e.band_error) row += "," + num(b);
    return row;
}

std::vector<fs::path> write_freq_maps(const images::Image& image, const model::Model<float>* model, const fs::path& out) {
    fs::create_directories(out);
    std::vector<fs::path> written;
    auto emit = [&](const std::string& name, const Tensor<float>& x) {
        const auto path = out / ("spectrum_" + name + ".pgm");
        images::write_pnm(path, map_image(spectral::freq_map(x)));
        written.push_back(path);
    };
    const int channels = model ? model->spec().in_channels : image.channels;
    auto x = image_tensor(image, channels);
    emit("input", planes(x));
    if (!model) return written;
    const auto& spec = model->spec();
    if (image.width != spec.image_size || image.height != spec.image_size) {
        throw DimensionError("freqmap: image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                             " but the checkpoint expects " + std::to_string(spec.image_size));
    }
    NoGradGuard guard;
    auto t = model->forward(x);
    emit("reconstruction", planes(t.reconstruction));
    for (int i = 0; i < spec.levels(); ++i) {
        emit("A" + std::to_string(i), planes(t.encoder[i]));
        emit("B" + std::to_string(i), planes(t.decoder_in[i]));
        if (t.complement[i].defined()) emit("C" + std::to_string(i), planes(t.complement[i]));
    }
    return written;
}

Reconstruction reconstruct(const model::Model<float>& model, const data::Dataset& images, const fs::path& out) {
    if (images.size != model.spec().image_size || images.channels != model.spec().in_channels) {
        throw DimensionError("reconstruct: images do not match the checkpoint's input shape");
    }
    fs::create_directories(out);
    const auto recon = reconstruct_all(model, images);
    Reconstruction r;
    r.psnr = psnr_u8(images.pixels, recon);
    r.grid = out / "reconstruction.ppm";
    images::write_pnm(r.grid, grid_two_rows(images, recon, 16));
    write_text(out / "psnr.txt", num(r.psnr) + "\n");
    return r;
}

TrainResult train_favae(const RunConfig& run, const fs::path& out, const fs::path& resume) {
    fs::create_directories(out);
    write_text(out / "config.txt", run.text);
    auto [train, eval] = make_datasets(run);

    std::optional<model::Model<float>> model;
    checkpoint::Checkpoint ck;
    if (!resume.empty()) {
        ck = checkpoint::load(resume);
        if (ck.spec.digest() != run.model.digest()) throw UsageError("train: checkpoint model spec differs from the config");
        model.emplace(ck.make_model());
    } else {
        model.emplace(run.model, run.seed);
    }
    model::Trainer<float> trainer(*model, run.adam, run.seed);
    if (!resume.empty()) ck.restore(trainer);

    TrainResult result;
    result.checkpoint = out / "checkpoint.bin";
    std::ofstream csv(out / "metrics.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write " + (out / "metrics.csv").string());
    const auto header = metrics_header(run.model);
    for (std::size_t i = 0; i < header.size(); ++i) csv << (i ? "," : "") << header[i];
    csv << "\n";

    const auto total = static_cast<std::uint64_t>(run.steps);
    for (std::uint64_t step = trainer.steps_done(); step < total; ++step) {
        const auto idx = data::batch_indices(train.count, std::min(run.batch, train.count), run.seed, step);
        model::StepMetrics m;
        try {
            m = trainer.step(train.batch<float>(idx));
        } catch (const NumericError&) {
            checkpoint::save(result.checkpoint, *model, &trainer);
            throw;
        }
        result.steps.push_back(m);
        const bool last = step + 1 == total;
        if ((step + 1) % run.log_every == 0 || last) {
            result.final_eval = evaluate(*model, eval);
            csv << metrics_row(m, result.final_eval) << "\n" << std::flush;
        }
        if (run.image_every > 0 && ((step + 1) % run.image_every == 0 || last)) {
            const auto dir = out / step_dir(step + 1);
            fs::create_directories(dir);
            images::write_pnm(dir / "reconstruction.ppm", grid_two_rows(eval, reconstruct_all(*model, eval), 8));
            write_freq_maps(to_image(eval.image(0), eval.channels, eval.size), &*model, dir);
        }
    }
    if (!csv) throw IoError("write failed for metrics.csv");
    if (result.steps.empty()) result.final_eval = evaluate(*model, eval);
    checkpoint::save(result.checkpoint, *model, &trainer);
    return result;
}

CatResult train_cat(const RunConfig& run, const fs::path& favae_checkpoint, const fs::path& out) {
    fs::create_directories(out);
    write_text(out / "config.txt", run.text);
    const auto ck = checkpoint::load(favae_checkpoint);
    const auto favae = ck.make_model();
    const auto& spec = favae.spec();
    if (spec.image_size != run.size) {
        throw UsageError("train-cat: dataset size " + std::to_string(run.size) + " differs from the checkpoint's " +
                         std::to_string(spec.image_size));
    }
    auto train = make_datasets(run).first;

    std::vector<std::string> captions;
    if (!run.cat.captions.empty()) {
        std::ifstream in(run.cat.captions);
        if (!in) throw IoError("cannot open captions " + run.cat.captions.string());
        for (std::string line; std::getline(in, line);) captions.push_back(line);
    }
    const int classes = *std::max_element(train.labels.begin(), train.labels.end()) + 1;
    if (!captions.empty() && static_cast<int>(captions.size()) < classes) {
        throw UsageError("train-cat: captions file has fewer tokens than dataset classes");
    }
    if (captions.empty()) {
        for (int k = 0; k < classes; ++k) captions.push_back("class" + std::to_string(k));
    }

    const int length = spec.latent_size() * spec.latent_size();
    std::vector<std::int32_t> seqs;
    for (int b = 0; b < train.count; b += kEvalChunk) {
        auto idx = range(b, std::min(train.count, b + kEvalChunk));
        auto s = favae.encode_indices(train.batch<float>(idx));
        seqs.insert(seqs.end(), s.begin(), s.end());
    }

    auto cs = run.cat.spec;
    cs.vocab = spec.codebook_size;
    cs.context = length;
    cs.cond_vocab = static_cast<int>(captions.size());
    cat::CatModel<float> model(cs, run.seed);
    cat::CatTrainer<float> trainer(model, {.lr = run.cat.lr});

    CatResult result;
    std::ofstream csv(out / "cat_metrics.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write " + (out / "cat_metrics.csv").string());
    csv << "step,nll\n";
    const int batch = std::min(run.cat.batch, train.count);
    for (int step = 0; step < run.cat.steps; ++step) {
        const auto idx = data::batch_indices(train.count, batch, run.seed ^ 0xCA7ull, static_cast<std::uint64_t>(step));
        std::vector<std::int32_t> s;
        cat::Condition c{batch, 1, {}, {}};
        for (int i : idx) {
            s.insert(s.end(), seqs.begin() + std::size_t(i) * length, seqs.begin() + std::size_t(i + 1) * length);
            c.tokens.push_back(train.labels[i]);
        }
        result.nll.push_back(trainer.step(s, batch, c));
        if ((step + 1) % run.cat.log_every == 0 || step + 1 == run.cat.steps) {
            csv << step + 1 << "," << num(result.nll.back()) << "\n";
        }
    }
    result.checkpoint = out / "cat.bin";
    checkpoint::save_cat(result.checkpoint, model, &trainer);

    const int n = run.cat.samples_per_class;
    std::ofstream summary(out / "cat_samples.csv", std::ios::binary);
    summary << "class,caption,samples,distinct_indices\n";
    for (int k = 0; k < cs.cond_vocab; ++k) {
        cat::Condition c{n, 1, std::vector<std::int32_t>(n, k), {}};
        const auto s = model.sample(c, {.temperature = run.cat.temperature, .top_k = run.cat.top_k, .seed = run.seed + k});
        std::vector<double> hist(cs.vocab, 0.0);
        for (auto t : s) hist[t] += 1;
        const int shown = std::min(n, 16);
        const auto decoded = [&] {
            NoGradGuard guard;
            return favae.decode_indices(std::span(s).first(std::size_t(shown) * length), shown);
        }();
        std::vector<images::Image> tiles;
        const auto numel = std::size_t(spec.in_channels) * spec.image_size * spec.image_size;
        for (int i = 0; i < shown; ++i) tiles.push_back(to_image(decoded.data().subspan(i * numel, numel), spec.in_channels, spec.image_size));
        images::write_pnm(out / ("samples_" + std::to_string(k) + ".ppm"), images::grid(tiles, 8));
        summary << k << "," << captions[k] << "," << n << "," << std::count_if(hist.begin(), hist.end(), [](double h) { return h > 0; }) << "\n";
        result.histograms.push_back(std::move(hist));
    }
    if (result.histograms.size() >= 2) result.js = cat::js_divergence(result.histograms[0], result.histograms[1]);
    write_text(out / "cat_js.txt", num(result.js) + "\n");
    return result;
}

}  // namespace favae::harness
