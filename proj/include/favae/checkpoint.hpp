#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "favae/cat.hpp"
#include "favae/model.hpp"

namespace favae::checkpoint {

// Layout: "FAVA", u32 version, kind ("favae" or "cat"), u64 spec digest, spec
// text, u64 optimizer step, u32 tensor count, then per tensor (name, u32 rank,
// u64 dims, f32 values), then a kind-specific tail (the codebook blob for
// favae). Optimizer moments are stored as "adam.m/<name>" and "adam.v/<name>".
struct Stored {
    Shape shape;
    std::vector<float> values;
};

struct Container {
    std::string kind;
    std::string spec_text;
    std::uint64_t step = 0;
    std::map<std::string, Stored> tensors;
    std::string tail;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

struct Checkpoint {
    model::ModelSpec spec;
    Container data;

    // A model with the stored spec and weights.
    model::Model<float> make_model() const;
    // Restores moments and step count; the trainer must wrap a model built by make_model.
    void restore(model::Trainer<float>& trainer) const;
};

void save(const std::filesystem::path& path, const model::Model<float>& model,
          const model::Trainer<float>* trainer = nullptr);
Checkpoint load(const std::filesystem::path& path);

struct CatCheckpoint {
    cat::CatSpec spec;
    Container data;

    cat::CatModel<float> make_model() const;
    void restore(cat::CatTrainer<float>& trainer) const;
};

void save_cat(const std::filesystem::path& path, const cat::CatModel<float>& model,
              const cat::CatTrainer<float>* trainer = nullptr);
CatCheckpoint load_cat(const std::filesystem::path& path);

}  // namespace favae::checkpoint
