// Copyright 2026 The dtrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dtrain/error.hpp"

namespace dtrain {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::disjointness_violation: return "DisjointnessViolation";
    case Errc::peer_unreachable: return "PeerUnreachable";
    case Errc::closed: return "Closed";
    case Errc::not_exposed: return "NotExposed";
    case Errc::deadlock_detected: return "DeadlockDetected";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::offset_overflow: return "OffsetOverflow";
    case Errc::record_too_large: return "RecordTooLarge";
    case Errc::format_error: return "FormatError";
    case Errc::group_mismatch: return "GroupMismatch";
    case Errc::empty_shard: return "EmptyShard";
    case Errc::segment_overflow: return "SegmentOverflow";
    case Errc::divergence_detected: return "DivergenceDetected";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace dtrain
