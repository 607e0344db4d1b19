//! Dimensionality reduction and clustering of image codes: PCA, exact
//! t-SNE, and k-means on the resulting 2-D map.

mod kmeans;
mod pca;
mod tsne;

pub use kmeans::{kmeans, nearest_members, Clustering, MAX_LLOYD_ITERS};
pub use pca::{pca_fit, pca_inverse, pca_transform, symmetric_eigen, PcaModel};
pub use tsne::{
    conditional_probabilities, joint_probabilities, kl_divergence, kl_gradient, pairwise_sq_dists, perplexity_of,
    tsne, Embedding2D, TsneConfig,
};
