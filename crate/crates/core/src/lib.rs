pub mod fem;
pub mod flow;
pub mod linalg;
pub mod mesh;
pub mod sim;
pub mod transport;
pub mod verify;
