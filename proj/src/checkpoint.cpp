#include "favae/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "favae/binio.hpp"
#include "favae/error.hpp"

namespace favae::checkpoint {

namespace {

constexpr char kMagic[5] = "FAVA";
constexpr std::uint32_t kVersion = 1;
constexpr const char* kEntries = "codebook.entries";

Stored stored(const Shape& shape, std::span<const float> values) { return {shape, {values.begin(), values.end()}}; }

void copy_into(std::span<float> dst, const Shape& shape, const Stored& s, const std::string& name) {
    if (shape != s.shape) {
        throw IoError("checkpoint: tensor " + name + " has shape " + shape_str(s.shape) + ", model expects " + shape_str(shape));
    }
    std::copy(s.values.begin(), s.values.end(), dst.begin());
}

const Stored& find(const Container& c, const std::string& name) {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) throw IoError("checkpoint: missing tensor " + name);
    return it->second;
}

void add_moments(Container& c, const std::vector<std::string>& names, const std::vector<Tensor<float>>& tensors,
                 const Adam<float>& adam) {
    if (adam.params().size() != names.size()) throw ContractError("checkpoint: trainer does not match the model");
    for (std::size_t i = 0; i < names.size(); ++i) {
        c.tensors["adam.m/" + names[i]] = stored(tensors[i].shape(), adam.first_moment(i));
        c.tensors["adam.v/" + names[i]] = stored(tensors[i].shape(), adam.second_moment(i));
    }
}

void restore_moments(const Container& c, const std::vector<std::string>& names, Adam<float>& adam) {
    if (adam.params().size() != names.size()) throw ContractError("checkpoint: trainer does not match the model");
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Shape shape = adam.params()[i].shape();
        copy_into(adam.first_moment(i), shape, find(c, "adam.m/" + names[i]), names[i]);
        copy_into(adam.second_moment(i), shape, find(c, "adam.v/" + names[i]), names[i]);
    }
    adam.set_step_count(c.step);
}

Container read_kind(const std::filesystem::path& path, const std::string& kind) {
    auto c = read_container(path);
    if (c.kind != kind) throw IoError(path.string() + ": expected a " + kind + " checkpoint, found " + c.kind);
    return c;
}

}  // namespace

void write_container(const std::filesystem::path& path, const Container& c) {
    std::ostringstream out(std::ios::binary);
    binio::put_magic(out, kMagic);
    binio::put(out, kVersion);
    binio::put_string(out, c.kind);
    binio::put<std::uint64_t>(out, model::fnv1a(c.spec_text));
    binio::put_string(out, c.spec_text);
    binio::put<std::uint64_t>(out, c.step);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (auto& [name, t] : c.tensors) {
        binio::put_string(out, name);
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        binio::put_f32<float>(out, t.values);
    }
    out.write(c.tail.data(), static_cast<std::streamsize>(c.tail.size()));

    const auto bytes = out.str();
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot write " + path.string());
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) throw IoError("write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    Container c;
    try {
        binio::expect_magic(in, kMagic);
        if (binio::get<std::uint32_t>(in) != kVersion) throw IoError("unsupported checkpoint version");
        c.kind = binio::get_string(in, 64);
        const auto digest = binio::get<std::uint64_t>(in);
        c.spec_text = binio::get_string(in, 1u << 20);
        if (model::fnv1a(c.spec_text) != digest) throw IoError("spec digest mismatch");
        c.step = binio::get<std::uint64_t>(in);
        const auto count = binio::get<std::uint32_t>(in);
        if (count > (1u << 16)) throw IoError("tensor count out of range");
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto name = binio::get_string(in);
            Stored s;
            const auto rank = binio::get<std::uint32_t>(in);
            if (rank > 8) throw IoError("tensor rank out of range");
            std::uint64_t n = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                const auto dim = binio::get<std::uint64_t>(in);
                if (dim > (1u << 26) || (n *= dim) > (1u << 26)) throw IoError("tensor too large");
                s.shape.push_back(static_cast<std::int64_t>(dim));
            }
            s.values.resize(n);
            binio::get_f32<float>(in, s.values);
            c.tensors.emplace(name, std::move(s));
        }
        std::ostringstream rest;
        rest << in.rdbuf();
        c.tail = rest.str();
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return c;
}

void save(const std::filesystem::path& path, const model::Model<float>& model, const model::Trainer<float>* trainer) {
    Container c;
    c.kind = "favae";
    c.spec_text = model.spec().canonical();
    c.step = trainer ? trainer->steps_done() : 0;
    const auto names = model.trainable_names();
    const auto tensors = model.trainable();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] != kEntries) c.tensors[names[i]] = stored(tensors[i].shape(), tensors[i].data());
    }
    if (trainer) add_moments(c, names, tensors, trainer->optimizer());
    std::ostringstream blob(std::ios::binary);
    model.codebook().save(blob);
    c.tail = blob.str();
    write_container(path, c);
}

Checkpoint load(const std::filesystem::path& path) {
    Checkpoint ck;
    ck.data = read_kind(path, "favae");
    try {
        ck.spec = model::ModelSpec::from_canonical(ck.data.spec_text);
    } catch (const ContractError& e) {
        throw IoError(path.string() + ": invalid stored spec: " + e.what());
    }
    return ck;
}

model::Model<float> Checkpoint::make_model() const {
    model::Model<float> m(spec, 0);
    auto names = m.trainable_names();
    auto tensors = m.trainable();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] != kEntries) copy_into(tensors[i].mutable_data(), tensors[i].shape(), find(data, names[i]), names[i]);
    }
    std::istringstream in(data.tail, std::ios::binary);
    auto cb = vq::Codebook<float>::load(in, spec.codebook_options());
    if (cb.size() != spec.codebook_size || cb.dim() != spec.n_z) throw IoError("checkpoint: codebook does not match the spec");
    m.codebook() = std::move(cb);
    return m;
}

void Checkpoint::restore(model::Trainer<float>& trainer) const {
    if (trainer.model().spec().digest() != spec.digest()) throw ContractError("checkpoint: trainer model has a different spec");
    restore_moments(data, trainer.model().trainable_names(), trainer.optimizer());
}

void save_cat(const std::filesystem::path& path, const cat::CatModel<float>& model, const cat::CatTrainer<float>* trainer) {
    Container c;
    c.kind = "cat";
    c.spec_text = model.spec().canonical();
    c.step = trainer ? trainer->optimizer().step_count() : 0;
    const auto names = model.trainable_names();
    const auto tensors = model.trainable();
    for (std::size_t i = 0; i < names.size(); ++i) c.tensors[names[i]] = stored(tensors[i].shape(), tensors[i].data());
    if (trainer) add_moments(c, names, tensors, trainer->optimizer());
    write_container(path, c);
}

CatCheckpoint load_cat(const std::filesystem::path& path) {
    CatCheckpoint ck;
    ck.data = read_kind(path, "cat");
    try {
        ck.spec = cat::CatSpec::from_canonical(ck.data.spec_text);
    } catch (const ContractError& e) {
        throw IoError(path.string() + ": invalid stored spec: " + e.what());
    }
    return ck;
}

cat::CatModel<float> CatCheckpoint::make_model() const {
    cat::CatModel<float> m(spec, 0);
    for (auto& [name, t] : m.parameters()) copy_into(t.mutable_data(), t.shape(), find(data, name), name);
    return m;
}

void CatCheckpoint::restore(cat::CatTrainer<float>& trainer) const {
    std::vector<std::string> names;
    for (auto& [name, t] : data.tensors) {
        if (name.rfind("adam.", 0) != 0) names.push_back(name);
    }
    restore_moments(data, names, trainer.optimizer());
}

}  // namespace favae::checkpoint
