#pragma once

#include <string>
#include <string_view>

// Deliberate corruption of selected backward rules, used to prove that the
// gradient-check battery detects a broken derivative. Off unless enabled.
namespace favae::fault {

enum class Site { none, plane_transform, conv2d, softmax, pow, depthwise_conv2d, cross_entropy };

void inject(Site site);
void clear();
Site active();
Site parse(std::string_view name);
std::string name(Site site);

template <typename T>
T factor(Site site) {
    return active() == site ? T(1.5) : T(1);
}

}  // namespace favae::fault
