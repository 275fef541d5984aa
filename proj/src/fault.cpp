#include "favae/fault.hpp"

#include <atomic>

#include "favae/error.hpp"

namespace favae::fault {

namespace {
std::atomic<Site> g_site{Site::none};

struct Entry {
    Site site;
    std::string_view name;
};
constexpr Entry kSites[] = {
    {Site::none, "none"},
    {Site::plane_transform, "plane_transform"},
    {Site::conv2d, "conv2d"},
    {Site::softmax, "softmax"},
    {Site::pow, "pow"},
    {Site::depthwise_conv2d, "depthwise_conv2d"},
    {Site::cross_entropy, "cross_entropy"},
};
}  // namespace

void inject(Site site) { g_site.store(site); }
void clear() { g_site.store(Site::none); }
Site active() { return g_site.load(std::memory_order_relaxed); }

Site parse(std::string_view text) {
    for (const auto& e : kSites) {
        if (e.name == text) return e.site;
    }
    throw ContractError("unknown fault site: " + std::string(text));
}

std::string name(Site site) {
    for (const auto& e : kSites) {
        if (e.site == site) return std::string(e.name);
    }
    return "?";
}

}  // namespace favae::fault
