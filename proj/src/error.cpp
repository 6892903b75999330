#include "slamkit/error.hpp"

#include <iostream>
#include <mutex>

namespace slamkit {

namespace {

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

WarningSink& sink_ref() {
    static WarningSink sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
    return sink;
}

}  // namespace

WarningSink set_warning_sink(WarningSink sink) {
    std::lock_guard lock(sink_mutex());
    auto prev = std::move(sink_ref());
    sink_ref() = std::move(sink);
    return prev;
}

void warn(const std::string& message) {
    std::lock_guard lock(sink_mutex());
    if (sink_ref()) sink_ref()(message);
}

}  // namespace slamkit
