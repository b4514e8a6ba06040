/** Non-blocking toast notifications and the offline banner. */

export function showToast(message: string, kind: "error" | "info" = "info"): void {
  const host = document.getElementById("toasts");
  if (!host) return;
  const el = document.createElement("div");
  el.className = `toast toast-${kind}`;
  el.textContent = message;
  host.appendChild(el);
  setTimeout(() => el.remove(), 4000);
}

export function setOffline(offline: boolean): void {
  const banner = document.getElementById("offline-banner");
  if (banner) banner.hidden = !offline;
  document.body.classList.toggle("offline", offline);
  for (const el of document.querySelectorAll<HTMLButtonElement>("[data-needs-service]")) {
    el.disabled = offline;
  }
}
