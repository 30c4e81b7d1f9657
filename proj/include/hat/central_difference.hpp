#pragma once

namespace hat {

struct CentralDifference {
    double value = 0;
    // Step actually used, after any halving.
    double step = 0;
    int halvings = 0;
    // The +step and -step evaluations still took different relu pieces.
    bool straddles_kink = false;
};

}  // namespace hat
