//! Scatterer phantoms and plane-wave channel-data synthesis.

mod acoustic;
mod mask;
mod phantom;
mod probe;

pub use acoustic::{
    acquisition_window, simulate_planewave, simulate_planewaves, ChannelData, ChannelMeta,
    FINE_OVERSAMPLING, MAX_SIM_ANGLE_DEG,
};
pub use mask::{
    procedural_mask, EchogenicityMask, Label, MaskShape, RegionKind, DEFAULT_MASK_CELL,
    HYPER_WEIGHT_RANGE,
};
pub use phantom::{
    generate_phantom, generate_phantom_with_density, make_test_phantom, make_test_phantom_on,
    scatterer_count, test_cysts, test_phantom_mask, Cyst, Phantom, PhantomMeta,
    DEFAULT_DENSITY_PER_CELL,
};
pub use probe::{pulse, resolution_cell, resolution_cell_extents, PhantomGeometry, ProbeConfig};
