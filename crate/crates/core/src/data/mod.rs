//! Scene datasets: generators, the IDX reader and the DAIR container.

mod container;
mod idx;
mod mnist;
mod sprites;

pub use container::{
    read_dataset, write_dataset, Dataset, DatasetHeader, SceneObject, SceneRecord, HEADER_LEN, MAGIC, VERSION,
};
pub use idx::{encode_idx, parse_idx, read_idx, IdxArray};
pub use mnist::{gen_multi_mnist, DigitSource, MnistConfig};
pub use sprites::{gen_multi_sprites, render_scene, Placed, Shape, SpritesConfig, ELLIPSE_ASPECT, SUPERSAMPLE};
