use elicit_service::{serve, ServiceConfig};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    serve(ServiceConfig::from_env()).await
}
