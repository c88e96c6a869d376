#pragma once

// Element type of all tensor buffers. The default build stores float32;
// verification builds define FGA_SCALAR_F64 and store float64 so that
// finite-difference oracles can run at tight tolerances.
namespace fga {

#ifdef FGA_SCALAR_F64
using scalar = double;
#else
using scalar = float;
#endif

}  // namespace fga
